//! Named parameter groups that can hold tensors, graph handles, gradients or
//! optimizer moments with one shared layout.

use rand::Rng;

use crate::tensor::Tensor;

/// Declare a struct of same-typed named slots plus `map` and field-list
/// visitors that walk the fields in declaration order.
macro_rules! param_group {
    (
        $(#[$meta:meta])*
        pub struct $name:ident {
            $( $(#[$fmeta:meta])* $field:ident ),+ $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = $crate::tensor::Tensor> {
            $( $(#[$fmeta])* pub $field: T, )+
        }

        impl<T> $name<T> {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn from_fn(mut f: impl FnMut(&'static str) -> T) -> Self {
                $name { $( $field: f(stringify!($field)), )+ }
            }

            pub fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> $name<U> {
                $name { $( $field: f(stringify!($field), &self.$field), )+ }
            }

            pub fn try_map<U, E>(
                &self,
                f: &mut impl FnMut(&str, &T) -> ::std::result::Result<U, E>,
            ) -> ::std::result::Result<$name<U>, E> {
                Ok($name { $( $field: f(stringify!($field), &self.$field)?, )+ })
            }

            pub fn fields(&self) -> Vec<(&'static str, &T)> {
                vec![$((stringify!($field), &self.$field)),+]
            }

            pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut T)> {
                vec![$((stringify!($field), &mut self.$field)),+]
            }
        }
    };
}

pub(crate) use param_group;

/// Matrix with entries uniform in `[-bound, bound]`.
pub(crate) fn uniform(rng: &mut impl Rng, dims: &[usize], bound: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(dims.to_vec(), data).expect("dims product")
}
