use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::DatasetSection;
use crate::lmkb_core::nn::Matrix;
use crate::lmkb_core::head::SPECIALS;
use crate::lmkb_core::{TokenSeq, Vocab};
use crate::sdg::lexicon::{self, SynonymGroup};
use crate::{seed, Error, Result};

/// Largest class count: every (colour, garment, action) combination.
pub const MAX_CLASSES: usize = 8 * 8 * 4;

/// Attribute slots a template can contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Person,
    Color,
    Garment,
    Action,
    Place,
    Item,
}

impl Slot {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "person" => Slot::Person,
            "color" => Slot::Color,
            "garment" => Slot::Garment,
            "action" => Slot::Action,
            "place" => Slot::Place,
            "item" => Slot::Item,
            _ => return None,
        })
    }

    pub fn groups(self) -> &'static [SynonymGroup] {
        match self {
            Slot::Person => &lexicon::PERSONS,
            Slot::Color => &lexicon::COLORS,
            Slot::Garment => &lexicon::GARMENTS,
            Slot::Action => &lexicon::ACTIONS,
            Slot::Place => &lexicon::PLACES,
            Slot::Item => &lexicon::ITEMS,
        }
    }
}

/// The attribute values that define a class. `action` is free (drawn per
/// caption) when the corpus has at most 64 classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub color: usize,
    pub garment: usize,
    pub action: Option<usize>,
}

impl ClassSpec {
    fn fixed(&self, slot: Slot) -> Option<usize> {
        match slot {
            Slot::Color => Some(self.color),
            Slot::Garment => Some(self.garment),
            Slot::Action => self.action,
            _ => None,
        }
    }
}

/// One filled template slot: which synonym group and which surface form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFill {
    pub slot: Slot,
    pub group: usize,
    pub form: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub tokens: TokenSeq,
    pub label: usize,
    pub template: usize,
    pub fills: Vec<SlotFill>,
}

/// Synthetic text-to-prototype retrieval corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub classes: Vec<ClassSpec>,
    /// One unit-norm prototype per class.
    pub gallery: Matrix,
    pub train: Vec<Caption>,
    pub test: Vec<Caption>,
}

/// Placeholder names and literal words of a template, in order.
fn template_parts(template: &str) -> Vec<std::result::Result<Slot, &str>> {
    template
        .split_whitespace()
        .map(|w| match w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(name) => Ok(Slot::parse(name).expect("built-in templates use known slots")),
            None => Err(w),
        })
        .collect()
}

/// Render a template with the given fills (in slot order).
pub fn render(template: usize, fills: &[SlotFill]) -> Result<String> {
    let t = lexicon::TEMPLATES
        .get(template)
        .ok_or_else(|| Error::input(format!("no template {template}")))?;
    let mut it = fills.iter();
    let mut words = Vec::new();
    for part in template_parts(t) {
        match part {
            Err(w) => words.push(w),
            Ok(slot) => {
                let f = it
                    .next()
                    .filter(|f| f.slot == slot)
                    .ok_or_else(|| Error::input("fills do not match template slots"))?;
                let group = slot
                    .groups()
                    .get(f.group)
                    .ok_or_else(|| Error::input("synonym group out of range"))?;
                words.push(group.get(f.form).ok_or_else(|| Error::input("surface form out of range"))?);
            }
        }
    }
    Ok(words.join(" "))
}

/// Corpus vocabulary: specials, lexicon words, then `tok<k>` padding up to
/// `vocab_size`.
pub fn corpus_vocab(vocab_size: usize) -> Result<Vocab> {
    let words = lexicon::content_words();
    let need = words.len() + SPECIALS.len();
    if vocab_size < need {
        return Err(Error::InvalidConfig(format!(
            "vocab_size {vocab_size} is smaller than the {need} tokens the caption templates need"
        )));
    }
    let mut all: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    all.extend((0..vocab_size - need).map(|k| format!("tok{k}")));
    Vocab::new(all)
}

pub fn class_specs(n_classes: usize) -> Result<Vec<ClassSpec>> {
    if !(2..=MAX_CLASSES).contains(&n_classes) {
        return Err(Error::InvalidConfig(format!(
            "n_classes = {n_classes} must lie in 2..={MAX_CLASSES}"
        )));
    }
    Ok((0..n_classes)
        .map(|k| ClassSpec {
            color: k % 8,
            garment: (k / 8) % 8,
            action: (n_classes > 64).then_some(k / 64),
        })
        .collect())
}

fn draw_form(rng: &mut impl Rng, n_forms: usize, canonical_prob: f64) -> usize {
    if n_forms <= 1 || rng.random_bool(canonical_prob) {
        0
    } else {
        rng.random_range(1..n_forms)
    }
}

/// Build the corpus for `seed`.
///
/// Each caption picks a template at random, fills the class-defining slots
/// with the class's attribute values and the other slots at random; every
/// filled word is written in its canonical form with probability
/// `canonical_prob`, otherwise as a random synonym. 20 % of each class's
/// captions (rounded up) go to the test split.
pub fn synth_dataset(cfg: &DatasetSection, seed: u64) -> Result<Corpus> {
    let vocab = corpus_vocab(cfg.vocab_size)?;
    let classes = class_specs(cfg.n_classes)?;
    if cfg.captions_per_class == 0 {
        return Err(Error::InvalidConfig("captions_per_class must be positive".into()));
    }
    let mut rng = seed::rng(seed, &[seed::label("corpus")]);
    let gallery = Matrix::from_fn(classes.len(), cfg.gallery_dim, |_, _| rng.sample(StandardNormal));
    let gallery = Matrix::from_rows(
        &gallery
            .row_iter()
            .map(|r| r.clone_owned() / r.norm())
            .collect::<Vec<_>>(),
    );
    let n_test = cfg.captions_per_class.div_ceil(5);
    let template_ids: Vec<usize> = (0..lexicon::TEMPLATES.len()).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, spec) in classes.iter().enumerate() {
        for c in 0..cfg.captions_per_class {
            let template = *template_ids.choose(&mut rng).expect("templates exist");
            let fills: Vec<SlotFill> = template_parts(lexicon::TEMPLATES[template])
                .into_iter()
                .filter_map(|p| p.ok())
                .map(|slot| {
                    let groups = slot.groups();
                    let group = spec.fixed(slot).unwrap_or_else(|| rng.random_range(0..groups.len()));
                    let form = draw_form(&mut rng, groups[group].len(), cfg.canonical_prob);
                    SlotFill { slot, group, form }
                })
                .collect();
            let text = render(template, &fills)?;
            let caption = Caption {
                tokens: vocab.encode(&text),
                text,
                label,
                template,
                fills,
            };
            if c < cfg.captions_per_class - n_test {
                train.push(caption);
            } else {
                test.push(caption);
            }
        }
    }
    Ok(Corpus {
        vocab,
        classes,
        gallery,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmkb_core::head::UNK;

    fn cfg(n_classes: usize, per: usize) -> DatasetSection {
        DatasetSection {
            n_classes,
            captions_per_class: per,
            ..DatasetSection::default()
        }
    }

    #[test]
    fn tiny_corpus_shape() {
        let c = synth_dataset(&cfg(2, 1), 0).unwrap();
        assert_eq!(c.test.len(), 2);
        assert_eq!(c.gallery.nrows(), 2);
        assert!(c.train.is_empty());
    }

    #[test]
    fn split_is_eighty_twenty_per_class() {
        let c = synth_dataset(&cfg(10, 5), 1).unwrap();
        assert_eq!((c.train.len(), c.test.len()), (40, 10));
        let c = synth_dataset(&cfg(10, 7), 1).unwrap();
        assert_eq!((c.train.len(), c.test.len()), (50, 20));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_dataset(&cfg(64, 4), 5).unwrap();
        assert_eq!(a, synth_dataset(&cfg(64, 4), 5).unwrap());
        assert_ne!(a.train, synth_dataset(&cfg(64, 4), 6).unwrap().train);
    }

    #[test]
    fn template_audit() {
        // Re-render every caption from its recorded fills and check that the
        // class-defining slots carry the class's attribute groups.
        let c = synth_dataset(&cfg(100, 3), 2).unwrap();
        for cap in c.train.iter().chain(&c.test) {
            assert_eq!(render(cap.template, &cap.fills).unwrap(), cap.text);
            assert_eq!(c.vocab.encode(&cap.text), cap.tokens);
            assert!(cap.tokens.ids().iter().all(|&t| t != UNK));
            let spec = c.classes[cap.label];
            for f in &cap.fills {
                if let Some(g) = spec.fixed(f.slot) {
                    assert_eq!(f.group, g);
                }
            }
            let colour_group: Vec<&str> = lexicon::COLORS[spec.color].to_vec();
            assert!(cap.text.split(' ').any(|w| colour_group.contains(&w)));
        }
    }

    #[test]
    fn vocabulary_padding_and_limits() {
        let v = corpus_vocab(200).unwrap();
        assert_eq!(v.size(), 200);
        assert!(matches!(corpus_vocab(100), Err(Error::InvalidConfig(_))));
        assert!(class_specs(1).is_err());
        assert!(class_specs(MAX_CLASSES + 1).is_err());
    }

    #[test]
    fn prototypes_are_unit_norm() {
        let c = synth_dataset(&cfg(8, 2), 3).unwrap();
        for r in c.gallery.row_iter() {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
    }
}
