#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use atelier::config::ServiceConfig;
use atelier::engine::Engine;
use atelier::server::AppState;
use atelier_core::model::synthetic::synthetic_archive;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

pub const CLASSES: [&str; 2] = ["Baroque", "Cubism"];
pub const PER_CLASS: usize = 10;

pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn root(&self) -> PathBuf {
        self.path("corpus")
    }

    pub fn query_image(&self) -> PathBuf {
        self.root().join("Cubism/img03.png")
    }

    /// Artifact flags shared by `classify`, `search` and `gradcam`.
    pub fn artifact_args(&self) -> Vec<String> {
        vec![
            "--weights".into(),
            self.path("weights.atlr").display().to_string(),
            "--index".into(),
            self.path("index.atlr").display().to_string(),
            "--images".into(),
            self.root().display().to_string(),
        ]
    }

    pub fn config(&self) -> ServiceConfig {
        ServiceConfig {
            weights: Some(self.path("weights.atlr")),
            index: Some(self.path("index.atlr")),
            images: Some(self.root()),
            ..ServiceConfig::default()
        }
    }

    pub fn state(&self) -> Arc<AppState> {
        let cfg = self.config();
        let engine = Engine::load(&cfg).expect("fixture engine");
        AppState::with_engine(cfg, engine)
    }
}

fn painting(rng: &mut ChaCha8Rng, class: usize) -> RgbImage {
    let base: [f64; 3] = if class == 0 { [150.0, 90.0, 40.0] } else { [50.0, 110.0, 180.0] };
    let (fx, fy) = (rng.random_range(0.05..0.4), rng.random_range(0.05..0.4));
    RgbImage::from_fn(48, 36, |x, y| {
        let wave = 60.0 * ((x as f64 * fx).sin() + (y as f64 * fy).cos());
        Rgb(base.map(|b| (b + wave + rng.random_range(-20.0..20.0)).clamp(0.0, 255.0) as u8))
    })
}

/// Runs the CLI in-process; returns (exit code, stdout).
pub fn cli<S: AsRef<str>>(args: &[S]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("atelier").chain(args.iter().map(AsRef::as_ref));
    let code = atelier::cli::run_with(argv, &mut out);
    (code, String::from_utf8(out).expect("utf-8 output"))
}

fn must(args: &[String]) -> String {
    let (code, out) = cli(args);
    assert_eq!(code, 0, "atelier {args:?}");
    out
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

/// Synthetic 19-class weights, a two-style corpus, and an index built from
/// it with `ingest`, `extract` and `index-build`.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let fx = Fixture {
            dir: tempfile::tempdir().expect("tempdir"),
        };
        synthetic_archive(19, 7).write(fx.path("weights.atlr")).expect("weights");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (c, name) in CLASSES.iter().enumerate() {
            let dir = fx.root().join(name);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..PER_CLASS {
                painting(&mut rng, c).save(dir.join(format!("img{i:02}.png"))).unwrap();
            }
        }
        let (root, manifest) = (fx.root(), fx.path("manifest.tsv"));
        must(&["ingest".into(), "--root".into(), p(&root), "--seed".into(), "3".into(), "--out".into(), p(&manifest)]);
        must(&[
            "extract".into(),
            "--manifest".into(),
            p(&manifest),
            "--root".into(),
            p(&root),
            "--weights".into(),
            p(&fx.path("weights.atlr")),
            "--out".into(),
            p(&fx.path("features.atlr")),
        ]);
        must(&[
            "index-build".into(),
            "--features".into(),
            p(&fx.path("features.atlr")),
            "--out".into(),
            p(&fx.path("index.atlr")),
        ]);
        fx
    })
}

/// Keys and value types of a JSON document; arrays collapse to their first element.
pub fn schema(v: &Value) -> Value {
    match v {
        Value::Null => "null".into(),
        Value::Bool(_) => "bool".into(),
        Value::Number(_) => "number".into(),
        Value::String(_) => "string".into(),
        Value::Array(a) => Value::Array(a.first().map(schema).into_iter().collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), schema(v))).collect()),
    }
}

/// Compares the schema of `body` with `tests/golden/<name>.json`.
/// `UPDATE_GOLDEN=1` rewrites the file.
pub fn assert_golden(name: &str, body: &str) {
    let value: Value = serde_json::from_str(body).unwrap_or_else(|e| panic!("{name}: invalid JSON ({e}): {body}"));
    let got = serde_json::to_string_pretty(&schema(&value)).unwrap() + "\n";
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(got, want, "schema drift in {name}");
}
