use std::path::Path;
use std::process::Command;

use scenegen::cli::run;
use scenegen::geometry::{backproject_frame, voxel_pool_in_frame, BackprojectConfig};
use scenegen::io::{read_config, read_ply, read_scene, write_trajectory};
use scenegen::metrics::read_report;
use scenegen::mesh::TriangleMesh;
use scenegen::pipeline::{subsample_indices, Trajectory};

fn ok(args: &[&str]) {
    let mut argv = vec!["scenegen"];
    argv.extend_from_slice(args);
    assert_eq!(run(argv), 0, "`{}` failed", args.join(" "));
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn gen(dir: &Path) -> String {
    let scene = s(&dir.join("scene"));
    ok(&["gen", "--out", &scene, "--seed", "5"]);
    scene
}

fn tiny_checkpoint(dir: &Path, scene: &str) -> String {
    let ckpt = s(&dir.join("net.ckpt"));
    ok(&["train", "--scene", scene, "--out", &ckpt, "--train-steps", "5", "--batch-size", "2"]);
    ckpt
}

#[test]
fn gen_writes_a_loadable_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path());
    let root = Path::new(&scene);
    let (m, frames) = read_scene(&root.join("scene.json")).unwrap();
    assert_eq!(frames.len(), 10);
    assert_eq!((m.intrinsics.width, m.intrinsics.height), (16, 16));
    assert!(!read_ply(&root.join("mesh.ply")).unwrap().faces.is_empty());
    assert_eq!(read_config(&root.join("config.json")).unwrap().max_edge_len, Some(0.8));
}

#[test]
fn eval_of_identical_scenes_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path());
    let csv = dir.path().join("m.csv");
    ok(&["eval", "--pred", &scene, "--gt", &scene, "--out", &s(&csv)]);
    let rows = read_report(&csv).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].psnr, 99.0);
    assert_eq!(rows[0].chamfer, 0.0);
    assert_eq!(rows[0].completeness, 1.0);
    assert_eq!(rows[0].ssim, 1.0);
}

#[test]
fn empty_trajectory_gives_pooled_input_fusion() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path());
    let ckpt = tiny_checkpoint(dir.path(), &scene);
    let (m, frames) = read_scene(&Path::new(&scene).join("scene.json")).unwrap();
    let traj = dir.path().join("empty.json");
    write_trajectory(&traj, &Trajectory { intrinsics: m.intrinsics, poses: vec![] }).unwrap();
    let out = dir.path().join("pred");
    let cfg = format!("{scene}/config.json");
    ok(&[
        "synthesize", "--scene", &scene, "--trajectory", &s(&traj), "--checkpoint", &ckpt, "--out", &s(&out),
        "--fraction", "0.5", "--config", &cfg,
    ]);

    let bp = BackprojectConfig { max_edge_len: 0.8, ..Default::default() };
    let keep = subsample_indices(frames.len(), 0.5);
    let mut fused = TriangleMesh::default();
    for &i in &keep {
        let (f, p) = &frames[i];
        fused = scenegen::geometry::fuse_meshes(&fused, &backproject_frame(f, &m.intrinsics, p, &bp).unwrap());
    }
    let pooled = voxel_pool_in_frame(&fused, bp.voxel_size, &frames[keep[0]].1).unwrap();
    let written = read_ply(&out.join("mesh.ply")).unwrap();
    assert_eq!(written.faces, pooled.faces);
    assert_eq!(std::fs::read_to_string(out.join("mesh.ply")).unwrap(), scenegen::io::encode_ply(&pooled));
    let (_, generated) = read_scene(&out.join("scene.json")).unwrap();
    assert!(generated.is_empty());
}

#[test]
fn sweep_rows_cover_fractions_times_betas() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path());
    let ckpt = tiny_checkpoint(dir.path(), &scene);
    let csv = dir.path().join("sweep.csv");
    let cfg = format!("{scene}/config.json");
    ok(&["sweep", "--scene", &scene, "--checkpoint", &ckpt, "--out", &s(&csv), "--betas", "0,1", "--steps", "4", "--config", &cfg]);
    let rows = read_report(&csv).unwrap();
    assert_eq!(rows.len(), 8);
    let fractions: Vec<f64> = rows.iter().map(|r| r.view_fraction).collect();
    assert_eq!(fractions, vec![0.05, 0.05, 0.1, 0.1, 0.2, 0.2, 0.5, 0.5]);
    assert!(rows[0].scene.ends_with("beta=0") && rows[1].scene.ends_with("beta=1"));
}

#[test]
fn mismatched_checkpoint_is_an_operational_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path());
    let big = s(&dir.path().join("big"));
    ok(&["gen", "--out", &big, "--resolution", "24"]);
    let ckpt = tiny_checkpoint(dir.path(), &big);
    let argv = ["scenegen", "sweep", "--scene", &scene, "--checkpoint", &ckpt, "--out", "/dev/null"];
    assert_eq!(run(argv), 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_scenegen");
    let out = Command::new(bin).arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = Command::new(bin).args(["eval", "--pred", "/nonexistent", "--gt", "/nonexistent", "--out", "x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
