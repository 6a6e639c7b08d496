//! Random scenarios shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use osn_rebac::profile::{ComponentKind, ComponentProfile, InformationFlowProfile, TpaDefinition};
use osn_rebac::scenario::{
    AppDoc, ConfigDoc, DataItemDoc, EdgeDoc, GeneralizationDoc, GeneralizedValueDoc, GrantDoc, GraphSection, LevelDoc,
    PolicyDoc, Scenario, ScenarioDoc,
};
use osn_rebac::{AppId, ComponentId, Platform, SensitivityLevel};
use rand::seq::{IndexedRandom, IteratorRandom};
use rand::Rng;

pub const USERS: [&str; 8] = ["ann", "bob", "cat", "dan", "eve", "fay", "gus", "hal"];
pub const APPS: [&str; 3] = ["alpha", "beta", "gamma"];
pub const RELATIONS: [&str; 3] = ["friend", "family", "colleague"];
/// `clicks` is always public so external components may declare it.
pub const ATTRIBUTES: [&str; 6] = ["name", "email", "dob", "photos", "wall", "clicks"];
pub const OUTPUTS: [&str; 3] = ["post", "notify", "suggest"];
pub const ACTIONS: [&str; 5] = ["read", "access", "post", "notify", "suggest"];
pub const LEVELS: [&str; 4] = ["NS", "LS", "MS", "HS"];

pub struct Limits {
    pub users: usize,
    pub apps: usize,
    pub components: usize,
    pub policies: usize,
}

pub const LIMITS: Limits = Limits {
    users: 8,
    apps: 3,
    components: 5,
    policies: 10,
};

fn pick_subset<R: Rng>(rng: &mut R, pool: &[&str], p: f64) -> Vec<String> {
    pool.iter()
        .filter(|_| rng.random_bool(p))
        .map(|s| s.to_string())
        .collect()
}

fn trust<R: Rng>(rng: &mut R) -> f64 {
    // coarse values so ties happen
    f64::from(rng.random_range(1..=5u8)) / 5.0
}

/// Random condition over the scenario's names. Every quantified variable is
/// used and sorts follow the naming conventions.
pub fn random_condition<R: Rng>(rng: &mut R, users: &[String], apps: &[String], comps: &[String]) -> String {
    let pool: [(&str, &str); 5] = [("c", "c"), ("c1", "c"), ("v", "u"), ("w", "u"), ("B", "a")];
    let nq = rng.random_range(0..=3);
    let quantified: Vec<(&str, &str)> = pool.iter().copied().choose_multiple(rng, nq);
    let mut prefix = Vec::new();
    for (i, (var, _)) in quantified.iter().enumerate() {
        let kind = ["forall", "exists", "notexists"].choose(rng).unwrap();
        let sep = if i + 1 == quantified.len() { ": " } else { ", " };
        prefix.push(format!("{kind} {var}{sep}"));
    }
    let vars_of = |sort: &str| -> Vec<String> {
        quantified
            .iter()
            .filter(|(_, s)| *s == sort)
            .map(|(v, _)| v.to_string())
            .collect()
    };
    let (cvars, uvars, avars) = (vars_of("c"), vars_of("u"), vars_of("a"));
    let user_term = |rng: &mut R| -> String {
        match rng.random_range(0..4) {
            0 | 1 if !uvars.is_empty() => uvars.choose(rng).unwrap().clone(),
            2 => users.choose(rng).unwrap().clone(),
            _ => "u".into(),
        }
    };
    let app_term = |rng: &mut R| -> String {
        match rng.random_range(0..4) {
            0 | 1 if !avars.is_empty() => avars.choose(rng).unwrap().clone(),
            2 => apps.choose(rng).unwrap().clone(),
            _ => "A".into(),
        }
    };
    let comp_term = |rng: &mut R| -> String {
        if !cvars.is_empty() && rng.random_bool(0.8) {
            cvars.choose(rng).unwrap().clone()
        } else {
            comps.choose(rng).unwrap().clone()
        }
    };
    let literal = |rng: &mut R, mention: Option<(&str, &str)>| -> String {
        let neg = if rng.random_bool(0.25) { "!" } else { "" };
        let kind = match mention {
            Some((_, "c")) => 0,
            Some((_, "a")) => rng.random_range(0..2),
            Some((_, _)) => rng.random_range(1..3),
            None => rng.random_range(0..3),
        };
        let (mut a, mut b, pred) = match kind {
            0 => {
                let p = ["is_component", "int_component", "ext_component"].choose(rng).unwrap();
                (comp_term(rng), app_term(rng), p.to_string())
            }
            1 => (user_term(rng), app_term(rng), "installed".to_string()),
            _ => (
                user_term(rng),
                user_term(rng),
                RELATIONS.choose(rng).unwrap().to_string(),
            ),
        };
        if let Some((var, sort)) = mention {
            match (kind, sort) {
                (0, "c") => a = var.to_string(),
                (_, "a") => b = var.to_string(),
                (2, _) if rng.random_bool(0.5) => b = var.to_string(),
                _ => a = var.to_string(),
            }
        }
        format!("{neg}{pred}({a},{b})")
    };
    let mut lits: Vec<String> = (0..rng.random_range(1..=3)).map(|_| literal(rng, None)).collect();
    for &(var, sort) in &quantified {
        let used = lits.iter().any(|l| {
            l.trim_start_matches('!')
                .split(['(', ',', ')'])
                .skip(1)
                .any(|t| t == var)
        });
        if !used {
            lits.push(literal(rng, Some((var, sort))));
        }
    }
    format!("{}{}", prefix.concat(), lits.join(" & "))
}

pub fn random_policy<R: Rng>(rng: &mut R, users: &[String], apps: &[String], comps: &[String]) -> String {
    let target = match rng.random_range(0..5) {
        0 => users.choose(rng).unwrap().clone(),
        1 | 2 => "u".into(),
        _ => "-".into(),
    };
    let data = if rng.random_bool(0.7) {
        let mut d = pick_subset(rng, &ATTRIBUTES, 0.35);
        if d.is_empty() {
            d.push(ATTRIBUTES.choose(rng).unwrap().to_string());
        }
        format!("{{{}}}, ", d.join(", "))
    } else {
        String::new()
    };
    let n = rng.random_range(1..=3);
    let mut actions: Vec<String> = ACTIONS
        .iter()
        .copied()
        .choose_multiple(rng, n)
        .into_iter()
        .map(|a| a.to_string())
        .collect();
    if rng.random_bool(0.15) {
        actions[0] = format!("!{}", actions[0]);
    }
    let decision = rng.random_range(0..2);
    let cond = random_condition(rng, users, apps, comps);
    format!("[{target}, {data}{{{}}}, {decision}, [{cond}]]", actions.join(", "))
}

/// `apps_first` scenarios let external components declare private inputs,
/// since registration then sees no data levels; the runtime flow check must
/// catch those reads.
pub fn random_scenario<R: Rng>(rng: &mut R, apps_first: bool) -> ScenarioDoc {
    let users: Vec<String> = USERS[..rng.random_range(1..=LIMITS.users)]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let apps: Vec<String> = APPS[..rng.random_range(1..=LIMITS.apps)]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let mut edges = Vec::new();
    for a in &users {
        for b in &users {
            if a != b && rng.random_bool(0.3) {
                edges.push(EdgeDoc {
                    from: a.clone(),
                    to: b.clone(),
                    relation: RELATIONS.choose(rng).unwrap().to_string(),
                    trust: trust(rng),
                });
            }
        }
    }

    let mut data_items = Vec::new();
    for u in &users {
        for attr in ATTRIBUTES {
            if !rng.random_bool(0.7) {
                continue;
            }
            let level = if attr == "clicks" {
                "NS"
            } else {
                LEVELS.choose(rng).unwrap()
            };
            data_items.push(DataItemDoc {
                owner: u.clone(),
                id: attr.to_string(),
                value: vec![format!("{u}-{attr}")],
                sensitivity: LevelDoc::Name(level.to_string()),
                write_only: false,
            });
        }
    }

    let mut app_docs = Vec::new();
    let mut comp_names = Vec::new();
    for app in &apps {
        let n = rng.random_range(1..=LIMITS.components);
        let ids: Vec<String> = (1..=n).map(|i| format!("C{i}")).collect();
        let mut components = Vec::new();
        for id in &ids {
            let kind = if rng.random_bool(0.3) {
                ComponentKind::External
            } else {
                ComponentKind::Internal
            };
            let inputs = match kind {
                ComponentKind::External if !apps_first => pick_subset(rng, &["clicks"], 0.7),
                _ => pick_subset(rng, &ATTRIBUTES, 0.55),
            };
            components.push(ComponentProfile {
                id: ComponentId::new(id.as_str()).unwrap(),
                kind,
                inputs: inputs.into_iter().collect(),
                outputs: pick_subset(rng, &OUTPUTS, 0.5).into_iter().collect(),
                adjacent: ids
                    .iter()
                    .filter(|o| *o != id && rng.random_bool(0.3))
                    .map(|o| ComponentId::new(o.as_str()).unwrap())
                    .collect(),
                external_entities: BTreeSet::new(),
            });
            comp_names.push(format!("{app}/{id}"));
        }
        let required_data = components.iter().flat_map(|c| c.inputs.iter().cloned()).collect();
        app_docs.push(AppDoc {
            profile: InformationFlowProfile {
                app: AppId::new(app.as_str()).unwrap(),
                title: app.clone(),
                domain: format!("www.{app}.example"),
                callback_url: String::new(),
                required_data,
                components,
                actions: BTreeSet::new(),
            },
            objects: BTreeMap::new(),
        });
    }

    let mut grants = Vec::new();
    let mut generalizations = Vec::new();
    for u in &users {
        for a in &app_docs {
            if !rng.random_bool(0.75) {
                continue;
            }
            let scopes: Vec<String> = a
                .profile
                .required_data
                .iter()
                .filter(|_| rng.random_bool(0.85))
                .cloned()
                .collect();
            for s in &scopes {
                let has_item = data_items.iter().any(|d| d.owner == *u && d.id == *s);
                if has_item && rng.random_bool(0.3) {
                    generalizations.push(GeneralizationDoc {
                        user: u.clone(),
                        app: a.profile.app.to_string(),
                        attribute: s.clone(),
                        value: vec![format!("{u}-{s}~")],
                        level: rng.random_range(1..=3),
                    });
                }
            }
            grants.push(GrantDoc {
                id: None,
                user: u.clone(),
                app: a.profile.app.to_string(),
                scopes,
                generalize: BTreeMap::new(),
            });
        }
    }
    // an occasional level-0 entry: recorded but not a generalization
    if let Some(g) = generalizations.first_mut() {
        if rng.random_bool(0.2) {
            g.level = 0;
            g.value = vec![format!("{}-{}", g.user, g.attribute)];
        }
    }

    let policies = (0..rng.random_range(0..=LIMITS.policies))
        .map(|_| PolicyDoc {
            id: None,
            owner: users.choose(rng).unwrap().clone(),
            policy: random_policy(rng, &users, &apps, &comp_names),
        })
        .collect();

    ScenarioDoc {
        config: ConfigDoc {
            strict_trust: true,
            seed: rng.random(),
        },
        graph: GraphSection {
            users,
            relations: RELATIONS.iter().map(|s| s.to_string()).collect(),
            edges,
            installs: Vec::new(),
        },
        apps: app_docs,
        data_items,
        policies,
        grants,
        generalizations,
        trace: Vec::new(),
    }
}

fn level(l: &LevelDoc) -> SensitivityLevel {
    match l {
        LevelDoc::Name(n) => n.parse().unwrap(),
        LevelDoc::Score(s) => osn_rebac::data::classify(*s).unwrap(),
    }
}

/// Builds the platform a document describes. With `apps_first` the apps are
/// registered before any data item exists.
pub fn build(doc: &ScenarioDoc, apps_first: bool) -> Platform {
    if !apps_first {
        return Scenario::from_doc(doc.clone())
            .unwrap_or_else(|e| panic!("generated scenario rejected: {e}"))
            .platform;
    }
    let mut p = Platform::new(doc.config.seed);
    for r in &doc.graph.relations {
        p.graph_mut().declare_relation(r);
    }
    for u in &doc.graph.users {
        p.graph_mut().add_user(u).unwrap();
    }
    for a in &doc.apps {
        p.register_tpa(TpaDefinition::new(a.profile.clone(), BTreeMap::new()))
            .unwrap();
    }
    for d in &doc.data_items {
        let value = d.value.iter().cloned().collect();
        p.set_data_item(&d.owner, &d.id, value, level(&d.sensitivity), d.write_only)
            .unwrap();
    }
    for e in &doc.graph.edges {
        p.graph_mut()
            .add_relationship(&e.from, &e.to, &e.relation, e.trust)
            .unwrap();
    }
    for (n, pd) in doc.policies.iter().enumerate() {
        p.add_policy(&format!("p{}", n + 1), &pd.owner, &pd.policy)
            .unwrap_or_else(|e| panic!("{}: {e}", pd.policy));
    }
    for g in &doc.grants {
        let scopes = g.scopes.iter().cloned().collect();
        let opts = g
            .generalize
            .iter()
            .map(|(k, GeneralizedValueDoc { value, level })| (k.clone(), (value.iter().cloned().collect(), *level)))
            .collect();
        p.consent_and_issue(&g.user, &g.app, &scopes, &opts).unwrap();
    }
    for g in &doc.generalizations {
        p.opt_generalize(osn_rebac::generalizer::GeneralizationEntry {
            user: osn_rebac::UserId::new(g.user.as_str()).unwrap(),
            app: AppId::new(g.app.as_str()).unwrap(),
            attribute: g.attribute.clone(),
            value: g.value.iter().cloned().collect(),
            level: g.level,
        })
        .unwrap();
    }
    p
}
