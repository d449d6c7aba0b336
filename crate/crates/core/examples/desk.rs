//! Runs the desk-scale synthetic experiment and prints night-val scores.
//!
//! `DESK_ITERS` and `DESK_PRETRAIN` override the iteration counts.

#[path = "../tests/common/desk.rs"]
mod desk;

fn main() {
    env_logger::init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "desk_out".into());
    let r = desk::run_desk(std::path::Path::new(&out));
    for (name, s) in [("source-only", &r.baseline), ("full", &r.full), ("w/o static", &r.no_static)] {
        for (std, m) in &s.by_std {
            let iou: Vec<String> = m.iou.iter().map(|v| v.map_or("-".into(), |v| format!("{:.1}", 100.0 * v))).collect();
            println!("{name:12} std={std:<5} mIoU {:5.2}  [{}]", 100.0 * m.miou, iou.join(" "));
        }
    }
    println!("total {:.0}s", r.seconds);
}
