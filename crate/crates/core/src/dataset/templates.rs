use rand::Rng;

use super::{Inventory, SceneObject};

/// Non-visual words whose attention behaviour is contrasted with object words.
pub const FUNCTION_TOKENS: &[&str] = &["a", "the", "of", "on", "to"];

const COUNT_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    /// `a red circle and a blue star on the grid`
    List,
    /// `the red circle is next to the blue star`, or for a single object
    /// `the red circle is on the left of the grid`
    Relation,
    /// `two shapes on the grid`
    Count,
    /// `a picture of a red circle and a blue star`
    Picture,
}

fn surface(word: &str, inventory: &Inventory, rng: &mut impl Rng) -> String {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for s in inventory.synonyms.iter().filter(|s| s.canonical == word) {
        acc += s.probability;
        if u < acc {
            return s.word.clone();
        }
    }
    word.to_string()
}

fn describe(o: &SceneObject, inventory: &Inventory, rng: &mut impl Rng, out: &mut Vec<String>) {
    out.push(surface(&inventory.colors[o.color], inventory, rng));
    out.push(surface(&inventory.categories[o.category], inventory, rng));
}

fn list(objects: &[SceneObject], inventory: &Inventory, rng: &mut impl Rng, out: &mut Vec<String>) {
    for (i, o) in objects.iter().enumerate() {
        if i > 0 {
            out.push("and".into());
        }
        out.push("a".into());
        describe(o, inventory, rng, out);
    }
}

fn push(out: &mut Vec<String>, words: &str) {
    out.extend(words.split_whitespace().map(String::from));
}

/// Caption tokens for `objects` (raster order) under `template`.
pub fn render(
    template: Template,
    objects: &[SceneObject],
    grid: usize,
    inventory: &Inventory,
    rng: &mut impl Rng,
) -> Vec<String> {
    let mut out = Vec::new();
    match template {
        Template::List => {
            list(objects, inventory, rng, &mut out);
            push(&mut out, "on the grid");
        }
        Template::Relation => match objects {
            [first, second, ..] => {
                out.push("the".into());
                describe(first, inventory, rng, &mut out);
                push(&mut out, "is next to the");
                describe(second, inventory, rng, &mut out);
            }
            [only] => {
                out.push("the".into());
                describe(only, inventory, rng, &mut out);
                push(&mut out, "is on the");
                let side = ["left", "middle", "right"][(only.col * 3 / grid).min(2)];
                out.push(side.into());
                push(&mut out, "of the grid");
            }
            [] => push(&mut out, "the grid is empty"),
        },
        Template::Count => {
            let n = objects.len();
            out.push(COUNT_WORDS.get(n).copied().unwrap_or("many").into());
            out.push(if n == 1 { "shape" } else { "shapes" }.into());
            push(&mut out, "on the grid");
        }
        Template::Picture => {
            push(&mut out, "a picture of");
            list(objects, inventory, rng, &mut out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obj(row: usize, col: usize, category: usize, color: usize) -> SceneObject {
        SceneObject {
            row,
            col,
            category,
            color,
            bbox: BBox { x0: 0, y0: 0, x1: 1, y1: 1 },
        }
    }

    fn plain() -> Inventory {
        Inventory { synonyms: vec![], ..Inventory::default() }
    }

    fn text(t: Template, objects: &[SceneObject]) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        render(t, objects, 7, &plain(), &mut rng).join(" ")
    }

    #[test]
    fn each_template_instantiates() {
        let red_circle = [obj(0, 0, 0, 0)];
        assert_eq!(text(Template::List, &red_circle), "a red circle on the grid");
        let two = [obj(0, 1, 0, 0), obj(3, 6, 3, 2)];
        assert_eq!(text(Template::List, &two), "a red circle and a blue star on the grid");
        assert_eq!(text(Template::Relation, &two), "the red circle is next to the blue star");
        assert_eq!(text(Template::Relation, &[obj(2, 6, 1, 1)]), "the green square is on the right of the grid");
        assert_eq!(text(Template::Relation, &[obj(2, 3, 1, 1)]), "the green square is on the middle of the grid");
        assert_eq!(text(Template::Count, &two), "two shapes on the grid");
        assert_eq!(text(Template::Count, &red_circle), "one shape on the grid");
        assert_eq!(text(Template::Picture, &two), "a picture of a red circle and a blue star");
    }

    #[test]
    fn certain_synonym_always_used() {
        let mut inv = plain();
        inv.synonyms.push(super::super::Synonym {
            word: "disk".into(),
            canonical: "circle".into(),
            probability: 1.0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let words = render(Template::List, &[obj(0, 0, 0, 0)], 7, &inv, &mut rng);
        assert_eq!(words.join(" "), "a red disk on the grid");
    }
}
