//! Built-in word lists for the toy caption corpus and the mock paraphraser.

/// An attribute value and its interchangeable surface forms; the first is canonical.
pub type SynonymGroup = &'static [&'static str];

pub const COLORS: [SynonymGroup; 8] = [
    &["red", "crimson", "scarlet"],
    &["blue", "navy", "azure"],
    &["green", "olive", "emerald"],
    &["black", "dark", "ebony"],
    &["white", "ivory", "pale"],
    &["yellow", "golden", "amber"],
    &["gray", "grey", "silver"],
    &["pink", "rose", "magenta"],
];

pub const GARMENTS: [SynonymGroup; 8] = [
    &["shirt", "tee", "top"],
    &["jacket", "coat", "blazer"],
    &["dress", "gown", "frock"],
    &["sweater", "jumper", "pullover"],
    &["hoodie", "sweatshirt", "fleece"],
    &["skirt", "kilt", "wrap"],
    &["shorts", "trunks", "bermudas"],
    &["trousers", "pants", "slacks"],
];

pub const ACTIONS: [SynonymGroup; 4] = [
    &["walking", "strolling", "wandering"],
    &["running", "jogging", "sprinting"],
    &["standing", "waiting", "lingering"],
    &["sitting", "resting", "lounging"],
];

pub const PERSONS: [SynonymGroup; 4] = [
    &["man", "guy", "gentleman"],
    &["woman", "lady", "female"],
    &["person", "pedestrian", "individual"],
    &["kid", "child", "youngster"],
];

pub const PLACES: [SynonymGroup; 4] = [
    &["street", "road", "avenue"],
    &["park", "garden", "lawn"],
    &["shop", "store", "market"],
    &["station", "platform", "terminal"],
];

pub const ITEMS: [SynonymGroup; 4] = [
    &["bag", "handbag", "purse"],
    &["backpack", "rucksack", "knapsack"],
    &["phone", "mobile", "cellphone"],
    &["umbrella", "parasol", "brolly"],
];

pub const FILLERS: &[&str] = &[
    "a", "the", "in", "is", "wearing", "wears", "with", "and", "near", "carrying", "holding", "by",
];

/// Words with no relation to any caption, emitted by the hallucinating mock.
pub const OFF_TOPIC: &[&str] = &[
    "dog", "sky", "mountain", "ocean", "car", "tree", "bird", "cloud", "river", "pizza", "computer",
    "music", "train", "planet", "forest", "castle", "volcano", "banana", "galaxy", "piano",
];

pub const TEMPLATES: &[&str] = &[
    "a {person} in a {color} {garment} is {action} near the {place}",
    "the {person} wears a {color} {garment} and is {action}",
    "a {person} wearing a {color} {garment} is {action} with a {item}",
    "the {person} is {action} by the {place} in a {color} {garment}",
    "a {person} carrying a {item} is {action} and wearing a {color} {garment}",
];

/// Every synonym group that the paraphraser may substitute within.
pub fn thesaurus() -> Vec<Vec<String>> {
    COLORS
        .iter()
        .chain(GARMENTS.iter())
        .chain(ACTIONS.iter())
        .chain(PERSONS.iter())
        .chain(PLACES.iter())
        .chain(ITEMS.iter())
        .map(|g| g.iter().map(|w| w.to_string()).collect())
        .collect()
}

/// All caption and off-topic words in a fixed order, without duplicates.
pub fn content_words() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    let groups = COLORS
        .iter()
        .chain(GARMENTS.iter())
        .chain(ACTIONS.iter())
        .chain(PERSONS.iter())
        .chain(PLACES.iter())
        .chain(ITEMS.iter())
        .flat_map(|g| g.iter().copied());
    for w in groups.chain(FILLERS.iter().copied()).chain(OFF_TOPIC.iter().copied()) {
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}
