//! The likelihood of a simulated trajectory must equal the product of the
//! choice probabilities the agent itself used while playing it.

use std::sync::Arc;

use metabandit::beliefs::build_hypothesis_grid;
use metabandit::env::{spec_from_condition, Environment};
use metabandit::likelihood::{loglik_dp, loglik_metadp, route_log_path, ParticipantHistory, Planning};
use metabandit::rng::{self, Domain};
use metabandit::simulate::{run_episode, RouteTrace, Step, Trajectory};
use metabandit::{Agent, AgentConfig, ChoiceRule, ConditionLabel, HypothesisClass, PolicyKind};

fn environment(seed: u64, routes: usize, flights: usize) -> Environment {
    let spec = spec_from_condition(&ConditionLabel::FarLow.spec(), routes, flights, seed).unwrap();
    Environment::realize(spec).unwrap()
}

/// Plays like `run_episode` but also records `ln p(choice)` and the route mixtures.
fn play_logged(agent: &mut Agent, env: &Environment, seed: u64) -> (Trajectory, f64, Vec<Vec<f64>>) {
    let mut rng = rng::stream(seed, Domain::Agent, &[0]);
    let mut routes = Vec::new();
    let mut mixtures = Vec::new();
    let mut logp = 0.0;
    for m in 1..=env.spec.m {
        agent.begin_route(&mut rng).unwrap();
        mixtures.push(agent.mixture().to_vec());
        let mut steps = Vec::new();
        for flight in 1..=env.spec.t {
            let probs = agent.choice_probabilities().unwrap();
            let airline = agent.act(&mut rng).unwrap();
            logp += probs[airline].ln();
            let outcome = env.outcome(m, flight, airline).unwrap();
            agent.observe(airline, outcome).unwrap();
            steps.push(Step { airline, outcome });
        }
        agent.end_route().unwrap();
        routes.push(RouteTrace {
            rates: env.rates(m).clone(),
            steps,
        });
    }
    let traj = Trajectory {
        env_hash: env.spec.content_hash(),
        condition: env.spec.condition_label,
        routes,
    };
    (traj, logp, mixtures)
}

fn class() -> Arc<HypothesisClass> {
    Arc::new(build_hypothesis_grid(&[0.2, 0.5, 0.8], 3).unwrap())
}

#[test]
fn dp_likelihood_matches_agent() {
    let env = environment(5, 3, 6);
    let rule = ChoiceRule::eps_greedy(0.2).unwrap();
    let mut agent = Agent::new(AgentConfig::new(PolicyKind::Dp, rule, 6), class()).unwrap();
    let (traj, logp, _) = play_logged(&mut agent, &env, 1);
    let h = ParticipantHistory::from_trajectory("p", &traj).unwrap();
    let ll = loglik_dp(&h, None, &Planning::new(rule), None).unwrap();
    assert!((ll - logp).abs() < 1e-9, "{ll} vs {logp}");
}

#[test]
fn metadp_likelihood_matches_agent() {
    for rule in [ChoiceRule::eps_greedy(0.1).unwrap(), ChoiceRule::softmax(0.5).unwrap()] {
        let env = environment(9, 4, 6);
        let class = class();
        let mut agent = Agent::new(AgentConfig::new(PolicyKind::MetaDp, rule, 6), class.clone()).unwrap();
        let (traj, logp, _) = play_logged(&mut agent, &env, 2);
        let h = ParticipantHistory::from_trajectory("p", &traj).unwrap();
        let ll = loglik_metadp(&h, &class, None, &Planning::new(rule), None).unwrap();
        assert!((ll - logp).abs() < 1e-9, "{rule:?}: {ll} vs {logp}");
    }
}

#[test]
fn windowed_metadp_likelihood_matches_agent() {
    let env = environment(13, 3, 6);
    let class = class();
    let rule = ChoiceRule::eps_greedy(0.15).unwrap();
    let config = AgentConfig::new(PolicyKind::MetaDp, rule, 6).with_lookahead(2);
    let mut agent = Agent::new(config, class.clone()).unwrap();
    let (traj, logp, _) = play_logged(&mut agent, &env, 3);
    let h = ParticipantHistory::from_trajectory("p", &traj).unwrap();
    let ll = loglik_metadp(&h, &class, None, &Planning::new(rule).with_lookahead(2), None).unwrap();
    assert!((ll - logp).abs() < 1e-9, "{ll} vs {logp}");
}

#[test]
fn brmdp_path_likelihood_matches_agent_given_its_draws() {
    let env = environment(21, 3, 6);
    let class = class();
    let rule = ChoiceRule::eps_greedy(0.2).unwrap();
    let mut agent = Agent::new(AgentConfig::new(PolicyKind::Brmdp { draws: 2 }, rule, 6), class.clone()).unwrap();
    let (traj, logp, mixtures) = play_logged(&mut agent, &env, 4);
    let plan = Planning::new(rule);
    let ll: f64 = traj
        .routes
        .iter()
        .zip(&mixtures)
        .map(|(r, w)| route_log_path(&r.steps, &class, w, &plan, None).unwrap())
        .sum();
    assert!((ll - logp).abs() < 1e-9, "{ll} vs {logp}");
    for w in &mixtures {
        assert!(w.iter().all(|x| [0.0, 0.5, 1.0].contains(x)));
    }
}

#[test]
fn logged_play_matches_run_episode() {
    let env = environment(33, 2, 5);
    let class = class();
    let rule = ChoiceRule::eps_greedy(0.3).unwrap();
    let config = AgentConfig::new(PolicyKind::Brmdp { draws: 3 }, rule, 5);
    let (logged, _, _) = play_logged(&mut Agent::new(config.clone(), class.clone()).unwrap(), &env, 8);
    let mut rng = rng::stream(8, Domain::Agent, &[0]);
    let direct = run_episode(&mut Agent::new(config, class).unwrap(), &env, &mut rng).unwrap();
    assert_eq!(logged, direct);
}
