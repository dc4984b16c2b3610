//! TD learning of a tabular SF head on the 5x5 empty room, tracked against
//! the closed-form SR.
//!
//! cargo run --release --example td_learning -- [updates]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use sfl::encoder::OneHotEncoder;
use sfl::gridworld::{ActionMode, GridMap, SourcePolicy, TabularDynamics, Transition, DEFAULT_STATE_CAP};
use sfl::nn::OptimizerConfig;
use sfl::successor::{analytic_sr, SfConfig, SfLearner};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let updates: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10_000);
    let gamma = 0.5;
    let map = GridMap::parse(include_str!("../maps/empty5.txt"))?;
    let d = TabularDynamics::from_grid(&map, ActionMode::Full, DEFAULT_STATE_CAP)?;
    let sr = analytic_sr(&d, gamma)?;
    let (n, na) = (d.num_states(), d.num_actions());

    let config = SfConfig {
        hidden: vec![],
        gamma,
        batch_size: 64,
        target_update_interval: 100,
        output_bias: false,
        optimizer: OptimizerConfig::adam(0.003),
        ..SfConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut learner: SfLearner<usize> = SfLearner::new(config, n, na, &mut rng);
    for i in 0..20_000u64 {
        let (s, a) = (rng.random_range(0..n), rng.random_range(0..na));
        let t = Transition {
            state: s,
            action: a,
            reward: 0.0,
            next_state: d.next(s, a),
            done: false,
            source_policy: SourcePolicy::Random,
        };
        learner.buffer_mut().push(t, i)?;
    }

    let enc = OneHotEncoder::new(n, 1.0);
    let features = |s: &usize| enc.encode_index(*s);
    println!("{:>7}  {:>9}  {:>8}", "updates", "td loss", "L-inf");
    let mut loss = f64::NAN;
    while learner.updates() < updates {
        loss = learner.td_update(&mut rng, &features)?;
        if learner.updates().is_multiple_of(1_000) {
            let mut linf = 0.0f64;
            for s in 0..n {
                for (a, head) in learner.predict_all(&enc.encode_index(s)?)?.iter().enumerate() {
                    for (p, m) in head.values.iter().zip(sr.state_action_row(s, a)) {
                        linf = linf.max((p - m).abs());
                    }
                }
            }
            println!("{:>7}  {loss:>9.2e}  {linf:>8.4}", learner.updates());
        }
    }
    println!("final loss {loss:.2e}");
    Ok(())
}
