//! Typed view of the shipped rule/generator data file (`data/rules.toml`).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

use super::Split;

/// Raw text of the rule table, as shipped.
pub const RULES_TOML: &str = include_str!("../../data/rules.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct Rules {
    pub version: String,
    pub messages: Messages,
    pub splits: BTreeMap<String, SeedPartition>,
    pub house: HouseRules,
    pub shop: ShopRules,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Messages {
    pub nothing_happens: String,
    pub turn_limit: String,
    pub house_actions_prefix: String,
    pub shop_actions_prefix: String,
    pub help: String,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct SeedPartition {
    pub seed_start: u64,
    pub seed_size: u64,
}

impl SeedPartition {
    pub fn contains(&self, seed: u64) -> bool {
        seed >= self.seed_start && seed - self.seed_start < self.seed_size
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct HouseRules {
    pub layout: BTreeMap<String, HouseLayout>,
    pub receptacles: BTreeMap<String, ReceptacleKind>,
    pub rooms: Vec<RoomType>,
    pub rules: HouseTemplates,
    pub preconditions: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct HouseLayout {
    pub receptacles: [usize; 2],
    pub objects: [usize; 2],
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReceptacleKind {
    pub openable: bool,
    pub preposition: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RoomType {
    pub name: String,
    pub receptacles: Vec<String>,
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct HouseTemplates {
    pub go_to_closed: String,
    pub go_to_open: String,
    pub go_to_surface: String,
    pub open: String,
    pub close: String,
    pub take: String,
    #[serde(rename = "move")]
    pub move_to: String,
    pub inventory_empty: String,
    pub inventory_held: String,
    pub look_room: String,
    pub look_receptacle: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ShopRules {
    pub layout: BTreeMap<String, ShopLayout>,
    pub results_per_page: usize,
    pub price_cents: [u32; 2],
    pub brands: Vec<String>,
    pub categories: Vec<String>,
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub colors_per_product: [usize; 2],
    pub sizes_per_product: [usize; 2],
    pub attributes: Vec<AttributeVocab>,
    pub pages: ShopPages,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct ShopLayout {
    pub products: [usize; 2],
    pub attributes: [usize; 2],
}

#[derive(Debug, Clone, Deserialize)]
pub struct AttributeVocab {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ShopPages {
    pub search: String,
    pub results_header: String,
    pub item_header: String,
    pub item_footer: String,
    pub purchase: String,
    pub instruction: String,
}

impl Rules {
    pub fn partition(&self, split: Split) -> SeedPartition {
        self.splits[split.as_str()]
    }

    pub fn house_layout(&self, split: Split) -> HouseLayout {
        self.house.layout[layout_key(split)]
    }

    pub fn shop_layout(&self, split: Split) -> ShopLayout {
        self.shop.layout[layout_key(split)]
    }

    pub fn is_openable(&self, receptacle_class: &str) -> bool {
        self.house
            .receptacles
            .get(receptacle_class)
            .map(|k| k.openable)
            .unwrap_or(false)
    }

    pub fn preposition(&self, receptacle_class: &str) -> &str {
        self.house
            .receptacles
            .get(receptacle_class)
            .map(|k| k.preposition.as_str())
            .unwrap_or("on")
    }

    /// Every word a MiniShop search can match on.
    pub fn shop_vocabulary(&self) -> impl Iterator<Item = &str> {
        self.shop
            .categories
            .iter()
            .chain(&self.shop.colors)
            .chain(&self.shop.sizes)
            .chain(self.shop.attributes.iter().flat_map(|a| a.values.iter()))
            .map(String::as_str)
    }
}

fn layout_key(split: Split) -> &'static str {
    match split {
        Split::Train | Split::TestId => "in-distribution",
        Split::TestOod => "out-of-distribution",
    }
}

/// The parsed rule table. Parsing happens once; the file is compiled in.
pub fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| toml::from_str(RULES_TOML).expect("shipped rules.toml must parse"))
}

/// Substitute `{key}` placeholders.
pub(crate) fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in slots {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_rules_parse_and_partitions_are_disjoint() {
        let r = rules();
        assert!(!r.version.is_empty());
        let parts: Vec<_> = [Split::Train, Split::TestId, Split::TestOod]
            .iter()
            .map(|s| r.partition(*s))
            .collect();
        for (i, a) in parts.iter().enumerate() {
            for b in &parts[i + 1..] {
                let a_end = a.seed_start + a.seed_size;
                let b_end = b.seed_start + b.seed_size;
                assert!(a_end <= b.seed_start || b_end <= a.seed_start);
            }
        }
    }

    #[test]
    fn ood_layout_ranges_do_not_overlap_in_distribution() {
        let r = rules();
        let id = r.house_layout(Split::TestId);
        let ood = r.house_layout(Split::TestOod);
        assert!(id.receptacles[1] < ood.receptacles[0]);
        assert!(id.objects[1] < ood.objects[0]);
        let sid = r.shop_layout(Split::Train);
        let sood = r.shop_layout(Split::TestOod);
        assert!(sid.products[1] < sood.products[0]);
        assert!(sid.attributes[1] < sood.attributes[0]);
    }

    #[test]
    fn every_room_receptacle_has_a_kind_entry() {
        let r = rules();
        for room in &r.house.rooms {
            for rec in &room.receptacles {
                assert!(r.house.receptacles.contains_key(rec), "{rec}");
            }
            assert!(room.receptacles.iter().any(|k| r.is_openable(k)));
            assert!(room.receptacles.iter().any(|k| !r.is_openable(k)));
        }
    }

    #[test]
    fn fill_replaces_all_slots() {
        assert_eq!(fill("{r} and {r} {o}", &[("r", "a"), ("o", "b")]), "a and a b");
    }
}
