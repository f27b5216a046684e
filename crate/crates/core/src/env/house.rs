//! MiniHouse generation and transition rules.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rules::{fill, rules};
use super::{
    natural_key, parse_list, render_list, EntityId, EntityKind, EntityRecord, EpisodeConfig,
    EnvKind, GoalKind, ParsedAction, SuccessPredicate, TaskSpec, Verb, WorldState,
};
use crate::error::{HarnessError, Result};

const ROOM: &str = "room";
const AGENT: &str = "agent";

pub(super) fn generate(config: &EpisodeConfig, rng: &mut ChaCha8Rng) -> (WorldState, String) {
    let r = rules();
    let layout = r.house_layout(config.split);
    let room = &r.house.rooms[rng.gen_range(0..r.house.rooms.len())];
    let n_rec = rng.gen_range(layout.receptacles[0]..=layout.receptacles[1]);
    let n_obj = rng.gen_range(layout.objects[0]..=layout.objects[1]);

    let openable: Vec<&String> = room.receptacles.iter().filter(|k| r.is_openable(k)).collect();
    let surfaces: Vec<&String> = room.receptacles.iter().filter(|k| !r.is_openable(k)).collect();
    let mut rec_classes: Vec<&String> = vec![
        openable[rng.gen_range(0..openable.len())],
        surfaces[rng.gen_range(0..surfaces.len())],
    ];
    while rec_classes.len() < n_rec {
        rec_classes.push(&room.receptacles[rng.gen_range(0..room.receptacles.len())]);
    }

    let mut entities = BTreeMap::new();
    entities.insert(ROOM.to_string(), EntityRecord::node(EntityKind::Room, ROOM, None));
    entities.insert(AGENT.to_string(), EntityRecord::node(EntityKind::Agent, AGENT, None));

    let mut counters: BTreeMap<String, u32> = BTreeMap::new();
    let mut receptacles = Vec::new();
    for class in rec_classes {
        let n = counters.entry(class.clone()).or_insert(0);
        *n += 1;
        let id = format!("{class} {n}");
        let mut rec = EntityRecord::node(EntityKind::Receptacle, class, Some(ROOM));
        if r.is_openable(class) {
            rec.open = Some(false);
        }
        entities.insert(id.clone(), rec);
        receptacles.push(id);
    }
    receptacles.sort_by_key(|id| natural_key(id));
    entities.get_mut(ROOM).unwrap().contents = receptacles.clone();

    counters.clear();
    for _ in 0..n_obj {
        let class = &room.objects[rng.gen_range(0..room.objects.len())];
        let n = counters.entry(class.clone()).or_insert(0);
        *n += 1;
        let id = format!("{class} {n}");
        let host = receptacles[rng.gen_range(0..receptacles.len())].clone();
        entities.insert(id.clone(), EntityRecord::node(EntityKind::Object, class, Some(&host)));
        entities.get_mut(&host).unwrap().contents.push(id);
    }

    let mut state = WorldState {
        env_kind: EnvKind::MiniHouse,
        entities,
        agent_location: ROOM.to_string(),
        inventory: Vec::new(),
        task: placeholder_task(),
        step_count: 0,
        max_turns: config.max_turns,
        terminated: false,
        reward: 0,
        shop: None,
    };
    state.task = pick_task(&mut state, rng);
    let intro = format!("{}\nYour task is to: {}", look_room(&state), state.task.description);
    (state, intro)
}

fn placeholder_task() -> TaskSpec {
    TaskSpec {
        goal_kind: GoalKind::PutIn,
        description: String::new(),
        targets: BTreeMap::new(),
        success_predicate: SuccessPredicate::ObjectHeld {
            object_class: String::new(),
        },
    }
}

fn classes_of(state: &WorldState, kind: EntityKind) -> Vec<String> {
    let mut v: Vec<String> = state
        .entities
        .values()
        .filter(|e| e.kind == kind)
        .map(|e| e.class.clone())
        .collect();
    v.sort();
    v.dedup();
    v
}

fn pick_task(state: &mut WorldState, rng: &mut ChaCha8Rng) -> TaskSpec {
    let object_classes = classes_of(state, EntityKind::Object);
    let receptacle_classes = classes_of(state, EntityKind::Receptacle);

    if rng.gen_bool(0.5) {
        let mut pairs = Vec::new();
        for o in &object_classes {
            for r in &receptacle_classes {
                let task = put_in_task(o, r);
                if !task.success_predicate.holds(state) {
                    pairs.push(task);
                }
            }
        }
        if !pairs.is_empty() {
            let i = rng.gen_range(0..pairs.len());
            return pairs.swap_remove(i);
        }
    }

    // open-find: hide every instance of the class inside closed receptacles
    let class = object_classes[rng.gen_range(0..object_classes.len())].clone();
    let closed: Vec<EntityId> = state
        .entities
        .iter()
        .filter(|(_, e)| e.open == Some(false))
        .map(|(id, _)| id.clone())
        .collect();
    let mut instances: Vec<EntityId> = state
        .entities
        .iter()
        .filter(|(_, e)| e.kind == EntityKind::Object && e.class == class)
        .map(|(id, _)| id.clone())
        .collect();
    instances.sort_by_key(|id| natural_key(id));
    for obj in instances {
        let target = closed.choose(rng).unwrap().clone();
        relocate(state, &obj, &target);
    }
    open_find_task(&class)
}

fn put_in_task(object: &str, receptacle: &str) -> TaskSpec {
    let prep = rules().preposition(receptacle);
    TaskSpec {
        goal_kind: GoalKind::PutIn,
        description: format!("put some {object} {prep} {receptacle}."),
        targets: BTreeMap::from([
            ("object".to_string(), object.to_string()),
            ("receptacle".to_string(), receptacle.to_string()),
        ]),
        success_predicate: SuccessPredicate::ObjectIn {
            object_class: object.to_string(),
            receptacle_class: receptacle.to_string(),
        },
    }
}

fn open_find_task(object: &str) -> TaskSpec {
    TaskSpec {
        goal_kind: GoalKind::OpenFind,
        description: format!("find some {object} and pick it up."),
        targets: BTreeMap::from([("object".to_string(), object.to_string())]),
        success_predicate: SuccessPredicate::ObjectHeld {
            object_class: object.to_string(),
        },
    }
}

fn relocate(state: &mut WorldState, id: &str, to: &str) {
    let from = state.entities[id].location.clone();
    if let Some(from) = from {
        state.entities.get_mut(&from).unwrap().contents.retain(|c| c != id);
    }
    state.entities.get_mut(to).unwrap().contents.push(id.to_string());
    state.entities.get_mut(id).unwrap().location = Some(to.to_string());
    if to == AGENT {
        state.inventory.push(id.to_string());
    } else {
        state.inventory.retain(|c| c != id);
    }
}

fn look_room(state: &WorldState) -> String {
    fill(
        &rules().house.rules.look_room,
        &[("list", &render_list(&state.entities[ROOM].contents))],
    )
}

fn receptacle<'a>(state: &'a WorldState, name: &str) -> Option<(String, &'a EntityRecord)> {
    let id = name.trim().to_lowercase();
    let rec = state.entities.get(&id)?;
    (rec.kind == EntityKind::Receptacle).then_some((id, rec))
}

/// Apply a command; `None` means the action is invalid here.
pub(super) fn apply(state: &mut WorldState, action: &ParsedAction) -> Option<String> {
    let cmd = action.command()?;
    let t = &rules().house.rules;
    match cmd.verb {
        Verb::GoTo => {
            let (id, rec) = receptacle(state, cmd.arg(0))?;
            let list = render_list(&rec.contents);
            let text = match rec.open {
                Some(false) => fill(&t.go_to_closed, &[("r", &id)]),
                Some(true) => fill(&t.go_to_open, &[("r", &id), ("list", &list)]),
                None => fill(&t.go_to_surface, &[("r", &id), ("list", &list)]),
            };
            state.agent_location = id;
            Some(text)
        }
        Verb::Open | Verb::Close => {
            let (id, rec) = receptacle(state, cmd.arg(0))?;
            let want_open = cmd.verb == Verb::Open;
            if state.agent_location != id || rec.open != Some(!want_open) {
                return None;
            }
            let list = render_list(&rec.contents);
            state.entities.get_mut(&id).unwrap().open = Some(want_open);
            Some(if want_open {
                fill(&t.open, &[("r", &id), ("list", &list)])
            } else {
                fill(&t.close, &[("r", &id)])
            })
        }
        Verb::TakeFrom => {
            let obj = cmd.arg(0).trim().to_lowercase();
            let (rid, rec) = receptacle(state, cmd.arg(1))?;
            if state.agent_location != rid
                || !rec.accessible()
                || !rec.contents.contains(&obj)
                || !state.inventory.is_empty()
            {
                return None;
            }
            relocate(state, &obj, AGENT);
            Some(fill(&t.take, &[("o", &obj), ("r", &rid)]))
        }
        Verb::MoveTo => {
            let obj = cmd.arg(0).trim().to_lowercase();
            let (rid, rec) = receptacle(state, cmd.arg(1))?;
            if state.agent_location != rid || !rec.accessible() || !state.inventory.contains(&obj) {
                return None;
            }
            relocate(state, &obj, &rid);
            Some(fill(&t.move_to, &[("o", &obj), ("r", &rid)]))
        }
        Verb::Inventory => Some(if state.inventory.is_empty() {
            t.inventory_empty.clone()
        } else {
            fill(&t.inventory_held, &[("list", &render_list(&state.inventory))])
        }),
        Verb::Look => Some(if state.agent_location == ROOM {
            look_room(state)
        } else {
            fill(&t.look_receptacle, &[("r", &state.agent_location)])
        }),
        Verb::Help => Some(rules().messages.help.clone()),
        Verb::Search | Verb::Click | Verb::Buy => None,
    }
}

pub(super) fn admissible(state: &WorldState) -> Vec<String> {
    let mut out: Vec<String> = state.entities[ROOM]
        .contents
        .iter()
        .map(|r| format!("go to {r}"))
        .collect();
    if let Some(here) = state.entities.get(&state.agent_location) {
        if here.kind == EntityKind::Receptacle {
            let r = &state.agent_location;
            match here.open {
                Some(false) => out.push(format!("open {r}")),
                Some(true) => out.push(format!("close {r}")),
                None => {}
            }
            if here.accessible() {
                if state.inventory.is_empty() {
                    out.extend(here.contents.iter().map(|o| format!("take {o} from {r}")));
                } else {
                    out.extend(state.inventory.iter().map(|o| format!("move {o} to {r}")));
                }
            }
        }
    }
    out.extend(["help", "inventory", "look"].map(String::from));
    out.sort();
    out
}

pub(super) fn hidden_text(state: &WorldState) -> String {
    let mut lines = vec!["=== Objects on Receptacles ===".to_string()];
    for id in &state.entities[ROOM].contents {
        let rec = &state.entities[id];
        let list = render_list(&rec.contents);
        lines.push(match rec.open {
            Some(false) => format!(" - {id} is closed, if opened, in it, you see {list}."),
            Some(true) => format!(" - {id} is open, in it, you see {list}."),
            None => format!(" - On the {id}, you see {list}."),
        });
    }
    lines.push(String::new());
    lines.push("=== Task ===".to_string());
    let mut task = format!("goal: {}", state.task.goal_kind.as_str());
    for (k, v) in &state.task.targets {
        task.push_str(&format!("; {k}: {v}"));
    }
    lines.push(task);
    lines.join("\n")
}

pub(super) fn restore(hidden: &str, max_turns: u32) -> Result<WorldState> {
    let bad = |what: &str| HarnessError::Input(format!("malformed MiniHouse hidden text: {what}"));
    let mut entities = BTreeMap::new();
    entities.insert(ROOM.to_string(), EntityRecord::node(EntityKind::Room, ROOM, None));
    entities.insert(AGENT.to_string(), EntityRecord::node(EntityKind::Agent, AGENT, None));
    let mut order = Vec::new();
    let mut task_line = None;

    for line in hidden.lines() {
        if let Some(rest) = line.strip_prefix("goal: ") {
            task_line = Some(rest.to_string());
            continue;
        }
        let Some(body) = line.strip_prefix(" - ") else {
            continue;
        };
        let (id, open, list) = if let Some(rest) = body.strip_prefix("On the ") {
            let (id, list) = rest.split_once(", you see ").ok_or_else(|| bad(line))?;
            (id.to_string(), None, list)
        } else if let Some((id, list)) = body.split_once(" is closed, if opened, in it, you see ") {
            (id.to_string(), Some(false), list)
        } else if let Some((id, list)) = body.split_once(" is open, in it, you see ") {
            (id.to_string(), Some(true), list)
        } else {
            return Err(bad(line));
        };
        let items = parse_list(list.strip_suffix('.').ok_or_else(|| bad(line))?).ok_or_else(|| bad(line))?;
        let class = natural_key(&id).0;
        let mut rec = EntityRecord::node(EntityKind::Receptacle, &class, Some(ROOM));
        rec.open = open;
        for item in &items {
            let oclass = natural_key(item).0;
            entities.insert(item.clone(), EntityRecord::node(EntityKind::Object, &oclass, Some(&id)));
        }
        rec.contents = items;
        entities.insert(id.clone(), rec);
        order.push(id);
    }
    entities.get_mut(ROOM).unwrap().contents = order;

    let task_line = task_line.ok_or_else(|| bad("missing task"))?;
    let mut fields = task_line.split("; ");
    let goal = fields.next().unwrap_or_default();
    let targets: BTreeMap<String, String> = fields
        .filter_map(|f| f.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let object = targets.get("object").ok_or_else(|| bad("task object"))?;
    let task = match goal {
        "put-in" => put_in_task(object, targets.get("receptacle").ok_or_else(|| bad("task receptacle"))?),
        "open-find" => open_find_task(object),
        other => return Err(bad(other)),
    };

    Ok(WorldState {
        env_kind: EnvKind::MiniHouse,
        entities,
        agent_location: ROOM.to_string(),
        inventory: Vec::new(),
        task,
        step_count: 0,
        max_turns,
        terminated: false,
        reward: 0,
        shop: None,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{reset, step_raw, Split};
    use super::*;

    /// A hand-built kitchen: closed fridge holding an apple, a countertop
    /// with a mug, task "put some mug in fridge".
    fn kitchen() -> WorldState {
        let hidden = "=== Objects on Receptacles ===\n \
            - On the countertop 1, you see a mug 1.\n \
            - fridge 1 is closed, if opened, in it, you see a apple 1.\n\n\
            === Task ===\ngoal: put-in; object: mug; receptacle: fridge";
        restore(hidden, 50).unwrap()
    }

    #[test]
    fn open_fridge_reveals_contents() {
        let s = kitchen();
        let (s, o) = step_raw(&s, "go to fridge 1").unwrap();
        assert_eq!(o.text, "You arrive at fridge 1. The fridge 1 is closed.");
        let (s, o) = step_raw(&s, "open fridge 1").unwrap();
        assert_eq!(o.text, "You open the fridge 1. In it, you see a apple 1.");
        assert_eq!(s.entities["fridge 1"].open, Some(true));
        let (_, o) = step_raw(&s, "go to fridge 1").unwrap();
        assert_eq!(o.text, "You arrive at fridge 1. The fridge 1 is open. In it, you see a apple 1.");
    }

    #[test]
    fn put_in_task_completes_with_move() {
        let s = kitchen();
        let plan = [
            ("go to countertop 1", "You arrive at countertop 1. On the countertop 1, you see a mug 1."),
            ("take mug 1 from countertop 1", "You pick up the mug 1 from the countertop 1."),
            ("inventory", "You are carrying: a mug 1."),
            ("go to fridge 1", "You arrive at fridge 1. The fridge 1 is closed."),
            ("move mug 1 to fridge 1", "Nothing happens."),
            ("open fridge 1", "You open the fridge 1. In it, you see a apple 1."),
            ("move mug 1 to fridge 1", "You move the mug 1 to the fridge 1."),
        ];
        let mut s = s;
        for (i, (a, expect)) in plan.iter().enumerate() {
            let (n, o) = step_raw(&s, a).unwrap();
            assert_eq!(o.text, *expect, "step {i}");
            n.check_invariants().unwrap();
            s = n;
        }
        assert!(s.terminated);
        assert_eq!(s.reward, 1);
        assert_eq!(s.step_count, 7);
    }

    #[test]
    fn take_requires_empty_hands_and_presence() {
        let s = kitchen();
        let (s, o) = step_raw(&s, "take mug 1 from countertop 1").unwrap();
        assert_eq!(o.text, "Nothing happens.");
        let (s, _) = step_raw(&s, "go to countertop 1").unwrap();
        let (s, _) = step_raw(&s, "take mug 1 from countertop 1").unwrap();
        assert_eq!(s.inventory, vec!["mug 1"]);
        assert_eq!(s.entities["mug 1"].location.as_deref(), Some("agent"));
        let adm = admissible(&s);
        assert!(adm.contains(&"move mug 1 to countertop 1".to_string()));
        assert!(!adm.iter().any(|a| a.starts_with("take")));
    }

    #[test]
    fn look_inventory_help() {
        let s = kitchen();
        let (s, o) = step_raw(&s, "inventory").unwrap();
        assert_eq!(o.text, "You are not carrying anything.");
        let (s, o) = step_raw(&s, "look").unwrap();
        assert_eq!(
            o.text,
            "You are in the middle of a room. Looking quickly around you, you see a countertop 1, and a fridge 1."
        );
        let (_, o) = step_raw(&s, "help").unwrap();
        assert!(o.text.starts_with("Available commands: look:"));
    }

    #[test]
    fn admissible_actions_are_sorted_and_complete() {
        let s = kitchen();
        assert_eq!(
            admissible(&s),
            vec!["go to countertop 1", "go to fridge 1", "help", "inventory", "look"]
        );
        let (s, _) = step_raw(&s, "go to fridge 1").unwrap();
        assert!(admissible(&s).contains(&"open fridge 1".to_string()));
    }

    #[test]
    fn generated_tasks_are_unsatisfied_at_reset() {
        for split in Split::ALL {
            for seed in 0..200 {
                let (s, _, _) = reset(&EpisodeConfig::new(EnvKind::MiniHouse, seed, split)).unwrap();
                assert!(!s.task.success_predicate.holds(&s));
                if s.task.goal_kind == GoalKind::OpenFind {
                    let class = &s.task.targets["object"];
                    for e in s.entities.values().filter(|e| &e.class == class) {
                        let host = &s.entities[e.location.as_ref().unwrap()];
                        assert_eq!(host.open, Some(false));
                    }
                }
            }
        }
    }
}
