mod common;

use cloudlet_stgcn::accounting::{
    aggregation_flops_per_epoch, feature_bytes_per_epoch, holder_sizes, model_bytes_per_epoch,
    model_down_bytes_per_epoch, training_flops_per_epoch, CommCategory, FlopCategory, Setup,
};
use cloudlet_stgcn::dataset::Split;
use cloudlet_stgcn::metrics::Scope;
use cloudlet_stgcn::partition::{receptive_hops, CloudletPartition};
use cloudlet_stgcn::protocols::{run, RunConfig, RunResult, GLOBAL};
use common::*;

fn small() -> Scenario {
    Scenario::new(14, 700, 12.0, Some(4.0), 0.1, 5)
}

fn config(setup: Setup, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::new(setup, epochs, seeds(11));
    cfg.model = tiny_config();
    cfg.optimizer.lr = 1e-3;
    cfg
}

fn check_closed_forms(r: &RunResult, part: &CloudletPartition, cfg: &RunConfig, s: &Scenario) {
    let data = s.windows(r.horizon);
    let epochs = r.epochs;
    for epoch in 0..epochs {
        let l = &r.ledger;
        assert_eq!(
            l.bytes_in_epoch(CommCategory::ModelUp, epoch),
            model_bytes_per_epoch(
                r.setup,
                part.n_cloudlets(),
                part.degree_sum(),
                r.param_bytes
            )
        );
        assert_eq!(
            l.bytes_in_epoch(CommCategory::ModelDown, epoch),
            model_down_bytes_per_epoch(r.setup, part.n_cloudlets(), r.param_bytes)
        );
        assert_eq!(
            l.bytes_in_epoch(CommCategory::NodeFeature, epoch),
            feature_bytes_per_epoch(r.setup, part, data.train_timesteps()).total
        );
        let train = data.range(Split::Train).len() * cfg.local_epochs;
        assert_eq!(
            l.flops_in_epoch(FlopCategory::Training, epoch),
            training_flops_per_epoch(&cfg.model, train, &holder_sizes(r.setup, part))
        );
        let sizes = r
            .gossip_buffer_sizes
            .get(epoch)
            .cloned()
            .unwrap_or_default();
        assert_eq!(
            l.flops_in_epoch(FlopCategory::Aggregation, epoch),
            aggregation_flops_per_epoch(r.setup, part, r.param_count, &sizes)
        );
    }
}

#[test]
fn single_cloudlet_fl_matches_centralized() {
    let s = small();
    let data = s.windows(3);
    let single = CloudletPartition::single(&s.graph).unwrap();
    let c = run(&data, &s.graph, &single, &config(Setup::Centralized, 3)).unwrap();
    let f = run(&data, &s.graph, &single, &config(Setup::TraditionalFl, 3)).unwrap();
    let (a, b) = (c.val_curve(GLOBAL), f.val_curve(GLOBAL));
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn ledgers_equal_closed_forms_for_every_setup() {
    let s = small();
    let data = s.windows(3);
    let cfg0 = config(Setup::Centralized, 2);
    let part = s.partition(receptive_hops(&cfg0.model, None));
    assert!(part.n_cloudlets() == 7 && part.degree_sum() > 0);
    for setup in Setup::ALL {
        let cfg = config(setup, 2);
        let r = run(&data, &s.graph, &part, &cfg).unwrap();
        check_closed_forms(&r, &part, &cfg, &s);
        assert_eq!(r.val_curve(GLOBAL).len(), 2);
        assert_eq!(r.metrics[0].scope, Scope::Global);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let s = small();
    let data = s.windows(3);
    let part = s.partition(4);
    for setup in [Setup::ServerfreeFl, Setup::Gossip] {
        let mut cfg = config(setup, 2);
        let one = run(&data, &s.graph, &part, &cfg).unwrap();
        cfg.threads = 3;
        let three = run(&data, &s.graph, &part, &cfg).unwrap();
        assert_eq!(one.val_losses, three.val_losses);
        assert_eq!(one.ledger, three.ledger);
        assert_eq!(one.models, three.models);
        assert_eq!(one.gossip_peers, three.gossip_peers);
    }
}

#[test]
fn serverfree_pair_ends_with_identical_models() {
    let s = Scenario::new(8, 500, 6.0, Some(4.0), 0.1, 2);
    let data = s.windows(3);
    let pos = vec![s.positions[1], s.positions[4]];
    let part = CloudletPartition::build(&s.graph, pos, 8.0, 4).unwrap();
    assert_eq!(part.cloudlet_adjacency, vec![(0, 1)]);
    let r = run(&data, &s.graph, &part, &config(Setup::ServerfreeFl, 1)).unwrap();
    assert_eq!(r.models.len(), 2);
    assert_eq!(r.models[0].values, r.models[1].values);
}

#[test]
fn gossip_peers_are_seeded_and_never_self() {
    let s = small();
    let data = s.windows(3);
    let part = s.partition(4);
    let a = run(&data, &s.graph, &part, &config(Setup::Gossip, 3)).unwrap();
    let b = run(&data, &s.graph, &part, &config(Setup::Gossip, 3)).unwrap();
    assert_eq!(a.gossip_peers, b.gossip_peers);
    for epoch in &a.gossip_peers {
        for (c, &p) in epoch.iter().enumerate() {
            assert_ne!(c, p);
        }
    }
    assert!(a.gossip_buffer_sizes[0].iter().all(|&m| m == 0));
    assert_eq!(a.ledger.flops_in_epoch(FlopCategory::Aggregation, 0), 0);
    let mut other = config(Setup::Gossip, 3);
    other.seeds.gossip += 100;
    let c = run(&data, &s.graph, &part, &other).unwrap();
    assert_ne!(a.gossip_peers, c.gossip_peers);
}

#[test]
fn centralized_sends_no_models_and_one_stream_per_sensor() {
    let s = small();
    let data = s.windows(6);
    let part = s.partition(4);
    let r = run(&data, &s.graph, &part, &config(Setup::Centralized, 1)).unwrap();
    assert_eq!(r.ledger.bytes(CommCategory::ModelUp), 0);
    assert_eq!(r.ledger.bytes(CommCategory::ModelDown), 0);
    assert_eq!(
        r.ledger.bytes(CommCategory::NodeFeature),
        s.graph.n() as u64 * data.train_timesteps() as u64 * 4
    );
    // global plus one report per cloudlet that owns sensors
    let owning = part.owned.iter().filter(|o| !o.is_empty()).count();
    assert_eq!(r.metrics.len(), 1 + owning);
    assert!(r.metrics.iter().all(|m| m.mae <= m.rmse && m.horizon == 6));
}

#[test]
fn invalid_runs_are_rejected() {
    let s = small();
    let data = s.windows(3);
    let single = CloudletPartition::single(&s.graph).unwrap();
    assert!(run(&data, &s.graph, &single, &config(Setup::Gossip, 1)).is_err());
    assert!(run(&data, &s.graph, &single, &config(Setup::Centralized, 0)).is_err());
}
