#![allow(dead_code)]

use vlaforge_core::data::{oracle_dataset, Mixture, MixtureSpec};
use vlaforge_core::eval::{Embodiment, EnvKind, EnvSpec};
use vlaforge_core::policy::{registry_compose, Policy, PolicyConfig};
use vlaforge_core::trainer::all_target_chunks;
use vlaforge_server::{serve, ServeOptions, ServerHandle};

pub const HEADS: [&str; 4] = ["fast", "oft", "pi", "groot"];

pub fn config(head: &str) -> PolicyConfig {
    let mut c = PolicyConfig::new("vlm", head);
    c.k = 4;
    c.d = 16;
    c.head_hidden = 16;
    c.flow.hidden = 24;
    c.flow.denoise_steps = 4;
    c.fast.vocab_size = 96;
    c.groot.system2_period = 3;
    c
}

/// An untrained policy; the FAST tokenizer is fitted on oracle chunks so
/// it can decode.
pub fn policy(head: &str, seed: u64) -> Policy {
    let cfg = config(head);
    let mut p = registry_compose(&cfg, seed).unwrap();
    if head == "fast" {
        let spec = EnvSpec::new(EnvKind::PointReach, Embodiment::Point);
        let d = oracle_dataset(&spec, 8, 1).unwrap();
        let mix = Mixture::new(MixtureSpec::single(&d.name, "point", 0), vec![d]).unwrap();
        p.fit_head(&all_target_chunks(&mix, cfg.k).unwrap()).unwrap();
    }
    p
}

pub fn start(p: Policy, queue_depth: usize) -> ServerHandle {
    serve(p, "127.0.0.1:0", ServeOptions { queue_depth }).unwrap()
}
