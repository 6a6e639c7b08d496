mod common;

use osn_rebac::oracle::{audit, audit_with, brute_eval, ConsentMode};
use osn_rebac::policy::{evaluate_condition, parse_condition, Env};
use osn_rebac::{ComponentRef, UserId};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(seed: u64) -> (osn_rebac::scenario::ScenarioDoc, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apps_first = seed.is_multiple_of(4);
    (common::random_scenario(&mut rng, apps_first), apps_first)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn engine_matches_brute_force_on_random_conditions(seed in any::<u64>()) {
        let (doc, apps_first) = scenario(seed);
        let p = common::build(&doc, apps_first);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let comps: Vec<String> = p.profiles().all_components().map(|(r, _)| r.to_string()).collect();
        let apps: Vec<String> = doc.apps.iter().map(|a| a.profile.app.to_string()).collect();
        let text = common::random_condition(&mut rng, &doc.graph.users, &apps, &comps);
        let c = parse_condition(&text).unwrap();
        for owner in &doc.graph.users {
            for comp in &comps {
                let r = ComponentRef::parse(comp).unwrap();
                let env = Env::new(UserId::new(owner.as_str()).unwrap(), r.app.clone(), Some(r));
                let fast = evaluate_condition(&c, &env, p.graph(), p.profiles()).unwrap();
                let slow = brute_eval(&c, &env, p.graph(), p.profiles()).unwrap();
                prop_assert_eq!(fast, slow, "{} for {:?}", text, env);
            }
        }
    }

    #[test]
    fn audits_are_clean(seed in any::<u64>()) {
        let (doc, apps_first) = scenario(seed);
        let p = common::build(&doc, apps_first);
        for mode in [ConsentMode::Tokens, ConsentMode::AssumeConsent] {
            let report = audit(&p, mode).unwrap();
            prop_assert!(report.is_clean(), "{:?}: {:?}\n{}", mode, report, serde_json::to_string(&doc).unwrap());
        }
    }
}

#[test]
fn forcing_one_extra_grant_shows_up_as_oversharing() {
    let text = include_str!("../fixtures/kdb.json");
    let p = osn_rebac::scenario::Scenario::from_json(text).unwrap().platform;
    let snap = p.snapshot();
    let victim = |r: &osn_rebac::AccessRequest| {
        r.requester.to_string() == "spade/P1"
            && r.target.owner.as_str() == "tom"
            && r.target.attribute == "dateofbirth"
            && r.actions.contains("read")
    };
    let report = audit_with(&p, ConsentMode::AssumeConsent, |t, r| {
        victim(r) || osn_rebac::dam::decide_with_token(&snap, t, r).is_grant()
    })
    .unwrap();
    assert_eq!(report.undersharing, vec![]);
    assert_eq!(report.oversharing.len(), 1);
    assert_eq!(report.oversharing[0].to_string(), "spade/P1 read tom/dateofbirth");
}

#[test]
fn forcing_one_denial_shows_up_as_undersharing() {
    let text = include_str!("../fixtures/kdb.json");
    let p = osn_rebac::scenario::Scenario::from_json(text).unwrap().platform;
    let snap = p.snapshot();
    let report = audit_with(&p, ConsentMode::Tokens, |t, r| {
        let forced = r.requester.to_string() == "mario/M1"
            && r.target.owner.as_str() == "meena"
            && r.target.attribute == "name"
            && r.actions.contains("read");
        !forced && osn_rebac::dam::decide_with_token(&snap, t, r).is_grant()
    })
    .unwrap();
    assert_eq!(report.oversharing, vec![]);
    assert_eq!(report.undersharing.len(), 1);
}

#[test]
fn empty_policy_set_over_public_items_is_clean() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut doc = common::random_scenario(&mut rng, false);
    doc.policies.clear();
    for d in &mut doc.data_items {
        d.sensitivity = osn_rebac::scenario::LevelDoc::Name("NS".into());
    }
    let p = common::build(&doc, false);
    assert!(audit(&p, ConsentMode::AssumeConsent).unwrap().is_clean());
}
