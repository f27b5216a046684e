//! MiniShop generation and transition rules.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rules::{fill, rules};
use super::{
    EntityKind, EntityRecord, EnvKind, EpisodeConfig, GoalKind, ParsedAction, Purchase,
    ShopPage, ShopView, SuccessPredicate, TaskSpec, Verb, WorldState,
};
use crate::error::{HarnessError, Result};

const CATALOG: &str = "catalog";
pub const SEARCH_TEMPLATE: &str = "search[<your query>]";
const OPTION_NAMES: [&str; 2] = ["color", "size"];

pub(super) fn generate(config: &EpisodeConfig, rng: &mut ChaCha8Rng) -> (WorldState, String) {
    let r = &rules().shop;
    let layout = rules().shop_layout(config.split);
    let n_products = rng.gen_range(layout.products[0]..=layout.products[1]);

    let mut entities = BTreeMap::new();
    let mut catalog = EntityRecord::node(EntityKind::Catalog, CATALOG, None);
    let mut asins = BTreeSet::new();
    for _ in 0..n_products {
        let asin = loop {
            let tail: String = (0..8)
                .map(|_| {
                    let c = rng.gen_range(0..36u8);
                    (if c < 10 { b'0' + c } else { b'A' + c - 10 }) as char
                })
                .collect();
            let asin = format!("B0{tail}");
            if asins.insert(asin.clone()) {
                break asin;
            }
        };
        let n_attrs = rng.gen_range(layout.attributes[0]..=layout.attributes[1]);
        let category = r.categories.choose(rng).unwrap().clone();
        let mut attributes = BTreeMap::from([("category".to_string(), category.clone())]);
        let mut words = Vec::new();
        for vocab in r.attributes.iter().take(n_attrs - 1) {
            let v = vocab.values.choose(rng).unwrap().clone();
            words.push(v.clone());
            attributes.insert(vocab.name.clone(), v);
        }
        let brand = r.brands.choose(rng).unwrap();
        let title = format!("{brand} {} {category}", words.join(" "));
        let options = BTreeMap::from([
            ("color".to_string(), pick_subset(rng, &r.colors, r.colors_per_product)),
            ("size".to_string(), pick_subset(rng, &r.sizes, r.sizes_per_product)),
        ]);
        let mut product = EntityRecord::node(EntityKind::Product, &category, Some(CATALOG));
        attributes.insert("title".to_string(), title);
        product.attributes = attributes;
        product.options = options;
        product.price_cents = Some(rng.gen_range(r.price_cents[0]..=r.price_cents[1]));
        entities.insert(asin.clone(), product);
        catalog.contents.push(asin);
    }
    entities.insert(CATALOG.to_string(), catalog);

    // target product defines a satisfiable request
    let ids: Vec<&String> = asins.iter().collect();
    let target = &entities[ids[rng.gen_range(0..ids.len())]];
    let descriptive: Vec<(&String, &String)> = target
        .attributes
        .iter()
        .filter(|(k, _)| k.as_str() != "category" && k.as_str() != "title")
        .collect();
    let want = rng.gen_range(1..=descriptive.len().min(2));
    let mut chosen: Vec<usize> = sample(rng, descriptive.len(), want).into_vec();
    chosen.sort();
    let mut attributes = BTreeMap::from([("category".to_string(), target.class.clone())]);
    for i in chosen {
        attributes.insert(descriptive[i].0.clone(), descriptive[i].1.clone());
    }
    let options = BTreeMap::from([
        ("color".to_string(), target.options["color"].choose(rng).unwrap().clone()),
        ("size".to_string(), target.options["size"].choose(rng).unwrap().clone()),
    ]);
    let max_price_cents = (target.price_cents.unwrap() / 1000 + 1) * 1000;
    let task = purchase_task(attributes, options, max_price_cents);

    let state = WorldState {
        env_kind: EnvKind::MiniShop,
        entities,
        agent_location: CATALOG.to_string(),
        inventory: Vec::new(),
        task,
        step_count: 0,
        max_turns: config.max_turns,
        terminated: false,
        reward: 0,
        shop: Some(ShopView {
            page: ShopPage::Search,
            query: None,
            total_results: 0,
            hits: Vec::new(),
            selected: BTreeMap::new(),
            purchased: None,
        }),
    };
    let intro = search_page(&state);
    (state, intro)
}

fn pick_subset(rng: &mut ChaCha8Rng, vocab: &[String], range: [usize; 2]) -> Vec<String> {
    let n = rng.gen_range(range[0]..=range[1]).min(vocab.len());
    let mut idx = sample(rng, vocab.len(), n).into_vec();
    idx.sort();
    idx.into_iter().map(|i| vocab[i].clone()).collect()
}

/// Descriptive attribute values in vocabulary order (excluding category).
fn ordered_attribute_values(attributes: &BTreeMap<String, String>) -> Vec<String> {
    rules()
        .shop
        .attributes
        .iter()
        .filter_map(|v| attributes.get(&v.name).cloned())
        .collect()
}

fn purchase_task(
    attributes: BTreeMap<String, String>,
    options: BTreeMap<String, String>,
    max_price_cents: u32,
) -> TaskSpec {
    let category = attributes["category"].clone();
    let description = fill(
        &rules().shop.pages.instruction,
        &[
            ("attributes", &ordered_attribute_values(&attributes).join(" ")),
            ("category", &category),
            ("color", &options["color"]),
            ("size", &options["size"]),
            ("price", &(max_price_cents / 100).to_string()),
        ],
    );
    let mut targets = attributes.clone();
    targets.extend(options.iter().map(|(k, v)| (k.clone(), v.clone())));
    targets.insert("max_price_cents".to_string(), max_price_cents.to_string());
    TaskSpec {
        goal_kind: GoalKind::PurchaseMatching,
        description,
        targets,
        success_predicate: SuccessPredicate::Purchase {
            attributes,
            options,
            max_price_cents,
        },
    }
}

/// The query a careful shopper would type: every requested keyword.
pub fn canonical_query(state: &WorldState) -> String {
    let t = &state.task.targets;
    let mut words = ordered_attribute_values(t);
    words.push(t["category"].clone());
    words.extend(OPTION_NAMES.iter().filter_map(|o| t.get(*o).cloned()));
    words.join(" ")
}

fn view(state: &WorldState) -> &ShopView {
    state.shop.as_ref().expect("MiniShop state carries a view")
}

fn view_mut(state: &mut WorldState) -> &mut ShopView {
    state.shop.as_mut().expect("MiniShop state carries a view")
}

fn dollars(cents: u32) -> String {
    format!("{}.{:02}", cents / 100, cents % 100)
}

fn search_page(state: &WorldState) -> String {
    fill(
        &rules().shop.pages.search,
        &[("instruction", &state.task.description)],
    )
}

fn results_page(state: &WorldState) -> String {
    let v = view(state);
    let mut text = fill(
        &rules().shop.pages.results_header,
        &[("total", &v.total_results.to_string())],
    );
    for asin in &v.hits {
        let p = &state.entities[asin];
        text.push_str(&format!(
            " [SEP] {asin} [SEP] {} [SEP] ${}",
            p.attributes["title"],
            dollars(p.price_cents.unwrap_or(0))
        ));
    }
    text
}

fn item_page(state: &WorldState, asin: &str) -> String {
    let p = &state.entities[asin];
    let pages = &rules().shop.pages;
    let mut text = pages.item_header.clone();
    for name in OPTION_NAMES {
        if let Some(values) = p.options.get(name) {
            text.push_str(&format!(" [SEP] {name}"));
            for v in values {
                text.push_str(&format!(" [SEP] {v}"));
            }
        }
    }
    text.push_str(" [SEP] ");
    text.push_str(&fill(
        &pages.item_footer,
        &[
            ("title", &p.attributes["title"]),
            ("price", &dollars(p.price_cents.unwrap_or(0))),
        ],
    ));
    text
}

fn run_search(state: &WorldState, query: &str) -> (usize, Vec<String>) {
    let vocab: BTreeSet<&str> = rules().shop_vocabulary().collect();
    let lowered = query.to_lowercase();
    let keywords: BTreeSet<&str> = lowered
        .split_whitespace()
        .filter(|w| vocab.contains(w))
        .collect();
    let mut matches: Vec<(u32, &String)> = state.entities[CATALOG]
        .contents
        .iter()
        .filter(|asin| {
            let p = &state.entities[*asin];
            keywords.iter().all(|k| {
                p.attributes
                    .iter()
                    .any(|(name, v)| name != "title" && v == k)
                    || p.options.values().any(|vs| vs.iter().any(|v| v == k))
            })
        })
        .map(|asin| (state.entities[asin].price_cents.unwrap_or(0), asin))
        .collect();
    matches.sort();
    let total = matches.len();
    let hits = matches
        .into_iter()
        .take(rules().shop.results_per_page)
        .map(|(_, a)| a.clone())
        .collect();
    (total, hits)
}

fn checkout(state: &mut WorldState, asin: String) -> String {
    let selected = view(state).selected.clone();
    let options = if selected.is_empty() {
        "none".to_string()
    } else {
        selected
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let v = view_mut(state);
    v.purchased = Some(Purchase {
        asin: asin.clone(),
        options: selected,
    });
    v.page = ShopPage::Done;
    let reward = u8::from(state.task.success_predicate.holds(state));
    state.terminated = true;
    state.reward = reward;
    fill(
        &rules().shop.pages.purchase,
        &[
            ("asin", &asin),
            ("options", &options),
            ("reward", &reward.to_string()),
        ],
    )
}

/// Apply a command; `None` means the action is invalid here.
pub(super) fn apply(state: &mut WorldState, action: &ParsedAction) -> Option<String> {
    let cmd = action.command()?;
    let page = view(state).page.clone();
    match (cmd.verb, &page) {
        (Verb::Search, ShopPage::Search) => {
            let (total, hits) = run_search(state, cmd.arg(0));
            let v = view_mut(state);
            v.query = Some(cmd.arg(0).to_string());
            v.total_results = total;
            v.hits = hits;
            v.page = ShopPage::Results;
            Some(results_page(state))
        }
        (Verb::Buy, ShopPage::Item { asin }) => Some(checkout(state, asin.clone())),
        (Verb::Click, _) => {
            let value = cmd.arg(0).trim().to_lowercase();
            match (&page, value.as_str()) {
                (ShopPage::Search, "search") => Some(search_page(state)),
                (ShopPage::Results | ShopPage::Item { .. }, "back to search") => {
                    let v = view_mut(state);
                    v.page = ShopPage::Search;
                    v.query = None;
                    v.total_results = 0;
                    v.hits.clear();
                    v.selected.clear();
                    Some(search_page(state))
                }
                (ShopPage::Results, _) => {
                    let asin = view(state)
                        .hits
                        .iter()
                        .find(|a| a.to_lowercase() == value)?
                        .clone();
                    let v = view_mut(state);
                    v.page = ShopPage::Item { asin: asin.clone() };
                    v.selected.clear();
                    Some(item_page(state, &asin))
                }
                (ShopPage::Item { .. }, "< prev") => {
                    let v = view_mut(state);
                    v.page = ShopPage::Results;
                    v.selected.clear();
                    Some(results_page(state))
                }
                (ShopPage::Item { asin }, "buy now") => Some(checkout(state, asin.clone())),
                (ShopPage::Item { asin }, _) => {
                    let (name, _) = state.entities[asin]
                        .options
                        .iter()
                        .find(|(_, vs)| vs.contains(&value))?;
                    let name = name.clone();
                    view_mut(state).selected.insert(name, value);
                    Some(item_page(state, asin))
                }
                _ => None,
            }
        }
        _ => None,
    }
}

pub(super) fn admissible(state: &WorldState) -> Vec<String> {
    let v = view(state);
    match &v.page {
        ShopPage::Search => vec![SEARCH_TEMPLATE.to_string(), "click[search]".to_string()],
        ShopPage::Results => {
            let mut out = vec!["click[back to search]".to_string()];
            out.extend(v.hits.iter().map(|a| format!("click[{}]", a.to_lowercase())));
            out
        }
        ShopPage::Item { asin } => {
            let mut out = vec!["click[back to search]".to_string(), "click[< prev]".to_string()];
            let p = &state.entities[asin];
            for name in OPTION_NAMES {
                if let Some(values) = p.options.get(name) {
                    out.extend(values.iter().map(|x| format!("click[{x}]")));
                }
            }
            out.push("click[buy now]".to_string());
            out
        }
        ShopPage::Done => Vec::new(),
    }
}

pub(super) fn is_checkout(state: &WorldState, action: &ParsedAction) -> bool {
    let on_item = matches!(
        state.shop.as_ref().map(|v| &v.page),
        Some(ShopPage::Item { .. })
    );
    on_item
        && match action.command() {
            Some(c) if c.verb == Verb::Buy => true,
            Some(c) if c.verb == Verb::Click => c.arg(0).trim().eq_ignore_ascii_case("buy now"),
            _ => false,
        }
}

pub(super) fn hidden_text(state: &WorldState) -> String {
    let mut lines = vec!["=== Catalog ===".to_string()];
    for asin in &state.entities[CATALOG].contents {
        let p = &state.entities[asin];
        let attrs: Vec<String> = p
            .attributes
            .iter()
            .filter(|(k, _)| k.as_str() != "title")
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let opts: Vec<String> = p
            .options
            .iter()
            .map(|(k, vs)| format!("{k}={}", vs.join("/")))
            .collect();
        lines.push(format!(
            " - {asin} | {} | ${} | {} | {}",
            p.attributes["title"],
            dollars(p.price_cents.unwrap_or(0)),
            attrs.join(", "),
            opts.join(", ")
        ));
    }
    lines.push(String::new());
    lines.push("=== Task ===".to_string());
    if let SuccessPredicate::Purchase {
        attributes,
        options,
        max_price_cents,
    } = &state.task.success_predicate
    {
        let kv = |m: &BTreeMap<String, String>| {
            m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
        };
        lines.push(format!(
            "goal: {} | attributes: {} | options: {} | price below: ${}",
            GoalKind::PurchaseMatching.as_str(),
            kv(attributes),
            kv(options),
            dollars(*max_price_cents)
        ));
    }
    lines.join("\n")
}

fn parse_cents(text: &str) -> Option<u32> {
    let (d, c) = text.strip_prefix('$')?.split_once('.')?;
    Some(d.parse::<u32>().ok()? * 100 + c.parse::<u32>().ok()?)
}

fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.split(", ")
        .filter_map(|p| p.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub(super) fn restore(hidden: &str, max_turns: u32) -> Result<WorldState> {
    let bad = |what: &str| HarnessError::Input(format!("malformed MiniShop hidden text: {what}"));
    let mut entities = BTreeMap::new();
    let mut catalog = EntityRecord::node(EntityKind::Catalog, CATALOG, None);
    let mut task = None;
    for line in hidden.lines() {
        if let Some(rest) = line.strip_prefix("goal: ") {
            let parts: Vec<&str> = rest.split(" | ").collect();
            if parts.len() != 4 {
                return Err(bad(line));
            }
            let attributes = parse_kv(parts[1].strip_prefix("attributes: ").ok_or_else(|| bad(line))?);
            let options = parse_kv(parts[2].strip_prefix("options: ").ok_or_else(|| bad(line))?);
            let price = parse_cents(parts[3].strip_prefix("price below: ").ok_or_else(|| bad(line))?)
                .ok_or_else(|| bad(line))?;
            task = Some(purchase_task(attributes, options, price));
            continue;
        }
        let Some(body) = line.strip_prefix(" - ") else {
            continue;
        };
        let parts: Vec<&str> = body.split(" | ").collect();
        if parts.len() != 5 {
            return Err(bad(line));
        }
        let mut attributes = parse_kv(parts[3]);
        let category = attributes.get("category").cloned().ok_or_else(|| bad(line))?;
        attributes.insert("title".to_string(), parts[1].to_string());
        let options = parse_kv(parts[4])
            .into_iter()
            .map(|(k, v)| (k, v.split('/').map(str::to_string).collect()))
            .collect();
        let mut product = EntityRecord::node(EntityKind::Product, &category, Some(CATALOG));
        product.attributes = attributes;
        product.options = options;
        product.price_cents = Some(parse_cents(parts[2]).ok_or_else(|| bad(line))?);
        entities.insert(parts[0].to_string(), product);
        catalog.contents.push(parts[0].to_string());
    }
    entities.insert(CATALOG.to_string(), catalog);
    Ok(WorldState {
        env_kind: EnvKind::MiniShop,
        entities,
        agent_location: CATALOG.to_string(),
        inventory: Vec::new(),
        task: task.ok_or_else(|| bad("missing task"))?,
        step_count: 0,
        max_turns,
        terminated: false,
        reward: 0,
        shop: Some(ShopView {
            page: ShopPage::Search,
            query: None,
            total_results: 0,
            hits: Vec::new(),
            selected: BTreeMap::new(),
            purchased: None,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{is_irreversible, parse_action, reset, step_raw, Split};
    use super::*;

    fn shop(seed: u64) -> WorldState {
        reset(&EpisodeConfig::new(EnvKind::MiniShop, seed, Split::Train)).unwrap().0
    }

    fn target_path(state: &WorldState) -> (WorldState, String) {
        let (s, _) = step_raw(state, &format!("search[{}]", canonical_query(state))).unwrap();
        let SuccessPredicate::Purchase { attributes, options, max_price_cents } =
            s.task.success_predicate.clone()
        else {
            unreachable!()
        };
        let asin = view(&s)
            .hits
            .iter()
            .find(|a| {
                let p = &s.entities[*a];
                attributes.iter().all(|(k, v)| p.attributes.get(k) == Some(v))
                    && p.price_cents.unwrap() < max_price_cents
                    && options.iter().all(|(k, v)| p.options[k].contains(v))
            })
            .expect("canonical query surfaces a matching product")
            .clone();
        (s, asin)
    }

    #[test]
    fn canonical_query_finds_a_satisfying_product_and_buying_it_succeeds() {
        for seed in 0..100 {
            let s0 = shop(seed);
            let (s, asin) = target_path(&s0);
            let (s, _) = step_raw(&s, &format!("click[{}]", asin.to_lowercase())).unwrap();
            let color = s.task.targets["color"].clone();
            let size = s.task.targets["size"].clone();
            let (s, _) = step_raw(&s, &format!("click[{color}]")).unwrap();
            let (s, _) = step_raw(&s, &format!("click[{size}]")).unwrap();
            assert!(is_irreversible(&s, &parse_action("click[buy now]")));
            let (s, o) = step_raw(&s, "click[buy now]").unwrap();
            assert!(o.terminated);
            assert_eq!(o.reward, 1, "seed {seed}");
            assert!(o.text.starts_with("Thank you for shopping with us!"));
            assert!(o.text.ends_with("Reward [SEP] 1"));
            s.check_invariants().unwrap();
        }
    }

    #[test]
    fn buying_without_options_fails() {
        let s0 = shop(3);
        let (s, asin) = target_path(&s0);
        let (s, _) = step_raw(&s, &format!("click[{asin}]")).unwrap();
        let (s, o) = step_raw(&s, "buy now").unwrap();
        assert!(o.terminated && s.terminated);
        assert_eq!(o.reward, 0);
        assert!(o.text.contains("[SEP] none [SEP]"));
    }

    #[test]
    fn navigation_is_reversible_and_search_only_on_search_page() {
        let s0 = shop(4);
        assert!(!is_irreversible(&s0, &parse_action("search[mug]")));
        let (s1, o1) = step_raw(&s0, "search[red]").unwrap();
        assert!(o1.text.starts_with("Back to Search [SEP] Page 1 (Total results: "));
        let (_, o) = step_raw(&s1, "search[blue]").unwrap();
        assert_eq!(o.text, "Nothing happens.");
        let (s2, o2) = step_raw(&s1, "click[back to search]").unwrap();
        assert_eq!(o2.text, search_page(&s0));
        assert_eq!(view(&s2), view(&s0));
        let (_, o) = step_raw(&s0, "click[search]").unwrap();
        assert_eq!(o.text, search_page(&s0));
    }

    #[test]
    fn search_is_conjunctive_over_known_keywords() {
        let s = shop(9);
        let (all_total, _) = run_search(&s, "anything at all 123");
        assert_eq!(all_total, s.entities[CATALOG].contents.len());
        let (t, hits) = run_search(&s, "red under 80 dollars");
        let reds = s
            .entities
            .values()
            .filter(|e| e.kind == EntityKind::Product && e.options["color"].iter().any(|c| c == "red"))
            .count();
        assert_eq!(t, reds);
        assert!(hits.len() <= 10);
        let prices: Vec<u32> = hits.iter().map(|h| s.entities[h].price_cents.unwrap()).collect();
        assert!(prices.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn click_matches_asins_case_insensitively() {
        let s0 = shop(5);
        let (s, _) = step_raw(&s0, "search[]").unwrap();
        let first = view(&s).hits[0].clone();
        let (s, o) = step_raw(&s, &format!("click[{first}]")).unwrap();
        assert!(o.text.starts_with("Back to Search [SEP] < Prev [SEP] color"));
        assert!(matches!(view(&s).page, ShopPage::Item { .. }));
        let adm = admissible(&s);
        assert_eq!(adm.last().unwrap(), "click[buy now]");
        let (s, _) = step_raw(&s, "click[< prev]").unwrap();
        assert_eq!(view(&s).page, ShopPage::Results);
    }
}
