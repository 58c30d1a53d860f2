use rand_chacha::ChaCha8Rng;
use reactor_rl::agents::{
    observe, run_episode, seeded_stream, AnyAgent, EpisodeOptions, ObsSpec, Td3Agent, Td3Hyper,
    TrainSetup, OBS_DIM,
};
use reactor_rl::plant::PlantConfig;
use reactor_rl::replay::ReplayBuffer;
use reactor_rl::reward::RewardConfig;
use std::time::Instant;

fn eval_rmse(agent: &mut AnyAgent, setup: TrainSetup<'_>, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    let out = run_episode(agent, setup, None, rng, EpisodeOptions::evaluation()).unwrap();
    let actions: Vec<f64> = out.rows.iter().map(|r| r.action).collect();
    (out.rmse(345.0), actions)
}

fn main() {
    let episodes: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(40);
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let plant = PlantConfig::default();
    let rewardc = RewardConfig::default();
    let obs = ObsSpec::default();
    let setup = TrainSetup {
        plant: &plant,
        reward: &rewardc,
        obs: &obs,
    };
    let mut hyper = Td3Hyper::default();
    if std::env::args().nth(3).as_deref() == Some("tanh") {
        hyper.actor_output = reactor_rl::agents::ActorOutput::ScaledTanh;
    }
    let mut agent =
        AnyAgent::Td3(Td3Agent::new(OBS_DIM, hyper, &mut seeded_stream(seed, 0)).unwrap());
    let mut e1 = ReplayBuffer::new(100_000);
    let mut rng = seeded_stream(seed, 1);

    let _ = observe; // keep import used
    let t_start = Instant::now();
    for ep in 0..episodes {
        let t0 = Instant::now();
        let out = run_episode(&mut agent, setup, Some(&mut e1), &mut rng, EpisodeOptions::training())
            .unwrap();
        let train_rmse = out.rmse(345.0);
        if (ep + 1) % 5 == 0 || ep < 3 {
            let (eval, acts) = eval_rmse(&mut agent, setup, &mut rng);
            let a_head: Vec<String> = acts.iter().take(6).map(|a| format!("{a:.1}")).collect();
            let a_mid: Vec<String> = acts[145..150].iter().map(|a| format!("{a:.1}")).collect();
            println!(
                "ep {:3}  train_rmse {:7.3}  eval_rmse {:7.3}  {:4.1}s/ep  a[0..6]={:?} a[145..150]={:?}",
                ep + 1,
                train_rmse,
                eval,
                t0.elapsed().as_secs_f64(),
                a_head,
                a_mid,
            );
        } else {
            println!(
                "ep {:3}  train_rmse {:7.3}  {:4.1}s/ep",
                ep + 1,
                train_rmse,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    println!("total: {:.1}s", t_start.elapsed().as_secs_f64());
}
