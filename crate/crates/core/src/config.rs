//! Experiment configuration in a flat `key = value` format.
//!
//! Lines starting with `#` are comments. A `profile` key (`paper` or `desk`)
//! selects the base values and is applied before every other key regardless
//! of its position. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {message}")]
    BadValue { key: String, value: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("expected one of: {}", [$($text),+].join(", "))),
                }
            }
        }
    };
}

string_enum!(ModelKind {
    Tiktoc => "tiktoc",
    CodedktTc => "codedkt_tc",
    Okt => "okt",
    OktTc => "okt_tc",
    Random => "random",
    Majority => "majority",
});

string_enum!(HeadVariant {
    OneHot => "one_hot",
    EmbedTest => "embed_test",
    EmbedTestWithProblem => "embed_test_with_problem",
});

string_enum!(Decoding { Greedy => "greedy" });

string_enum!(Rollout { TeacherForced => "teacher_forced" });

string_enum!(RepeatOver { Folds => "folds", Seeds => "seeds" });

string_enum!(AucAverage { Micro => "micro", Macro => "macro" });

string_enum!(Profile { Paper => "paper", Desk => "desk" });

impl ModelKind {
    /// Models that generate code.
    pub fn generates(self) -> bool {
        matches!(self, ModelKind::Tiktoc | ModelKind::Okt | ModelKind::OktTc)
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, ModelKind::Random | ModelKind::Majority)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub model: ModelKind,
    pub head_variant: HeadVariant,
    pub no_knowledge: bool,
    pub lambda: f64,
    pub lr_backbone: f64,
    pub lr_recurrent: f64,
    pub lr_head: f64,
    pub codedkt_lr_recurrent: f64,
    pub codedkt_lr_head: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub patience: usize,
    pub folds: usize,
    pub repeat_over: RepeatOver,
    pub seed: u64,
    pub decoding: Decoding,
    pub max_gen_len: usize,
    pub rollout: Rollout,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub d_code: usize,
    pub state_uses_score: bool,
    pub train_code_encoder: bool,
    pub first_submission_only: bool,
    pub auc_average: AucAverage,
    pub threshold: f64,
    pub generate_eval: bool,
    pub backend: String,
    pub timeout_s: f64,
    pub compile_cmd: String,
    pub run_cmd: String,
    pub source_name: String,
    /// Two-model comparison target for `experiment`; empty for none.
    pub compare: String,
    /// Settings for attaching a large adapter-tuned backbone; recorded only.
    pub lora_r: usize,
    pub lora_alpha: usize,
    pub lora_dropout: f64,
    pub quantization_bits: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl ExperimentConfig {
    pub fn profile(p: Profile) -> Self {
        let paper = ExperimentConfig {
            profile: Profile::Paper,
            model: ModelKind::Tiktoc,
            head_variant: HeadVariant::OneHot,
            no_knowledge: false,
            lambda: 0.5,
            lr_backbone: 1e-5,
            lr_recurrent: 5e-5,
            lr_head: 1e-4,
            codedkt_lr_recurrent: 1.5e-3,
            codedkt_lr_head: 1e-3,
            weight_decay: 0.01,
            warmup_frac: 0.1,
            grad_clip: 1.0,
            plateau_factor: 0.5,
            plateau_patience: 2,
            batch_size: 32,
            epochs: 20,
            max_steps: 0,
            patience: 3,
            folds: 5,
            repeat_over: RepeatOver::Folds,
            seed: 0,
            decoding: Decoding::Greedy,
            max_gen_len: 512,
            rollout: Rollout::TeacherForced,
            width: 256,
            layers: 4,
            heads: 8,
            vocab_size: 512,
            max_positions: 1024,
            d_code: 128,
            state_uses_score: true,
            train_code_encoder: false,
            first_submission_only: true,
            auc_average: AucAverage::Micro,
            threshold: 0.5,
            generate_eval: true,
            backend: "minilang".into(),
            timeout_s: 30.0,
            compile_cmd: String::new(),
            run_cmd: String::new(),
            source_name: "Main.java".into(),
            compare: String::new(),
            lora_r: 128,
            lora_alpha: 256,
            lora_dropout: 0.05,
            quantization_bits: 8,
        };
        match p {
            Profile::Paper => paper,
            Profile::Desk => ExperimentConfig {
                profile: Profile::Desk,
                lr_backbone: 1e-3,
                lr_recurrent: 1e-3,
                lr_head: 3e-3,
                batch_size: 2,
                epochs: 12,
                width: 64,
                layers: 2,
                heads: 4,
                vocab_size: 384,
                max_positions: 768,
                d_code: 64,
                ..paper
            },
        }
    }

    /// Effective (backbone, recurrent, head) learning rates for the model.
    pub fn rates(&self) -> (f64, f64, f64) {
        match self.model {
            ModelKind::CodedktTc => (self.lr_backbone, self.codedkt_lr_recurrent, self.codedkt_lr_head),
            _ => (self.lr_backbone, self.lr_recurrent, self.lr_head),
        }
    }

    /// λ actually used by the objective: 1 for the OKT family.
    pub fn effective_lambda(&self) -> f64 {
        match self.model {
            ModelKind::Okt | ModelKind::OktTc => 1.0,
            ModelKind::CodedktTc => 0.0,
            _ => self.lambda,
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            vocab: self.vocab_size,
            width: self.width,
            layers: self.layers,
            heads: self.heads,
            max_positions: self.max_positions,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        for (k, v) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_recurrent", self.lr_recurrent),
            ("lr_head", self.lr_head),
            ("codedkt_lr_recurrent", self.codedkt_lr_recurrent),
            ("codedkt_lr_head", self.codedkt_lr_head),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{k} must be positive"));
            }
        }
        if !(self.timeout_s > 0.0) {
            return bad("timeout_s must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)".into());
        }
        if self.batch_size == 0 || self.max_gen_len == 0 {
            return bad("batch_size and max_gen_len must be positive".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} must be divisible by heads {}", self.width, self.heads));
        }
        if self.vocab_size < 258 {
            return bad("vocab_size must be at least 258".into());
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must lie in [0, 1)".into());
        }
        if !self.compare.is_empty() {
            self.compare.parse::<ModelKind>().map_err(|m| ConfigError::BadValue {
                key: "compare".into(),
                value: self.compare.clone(),
                message: m,
            })?;
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse::<T>().map_err(|e| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                message: e.to_string(),
            })
        }
        let v = value;
        match key {
            "profile" => self.profile = p(key, v)?,
            "model" => self.model = p(key, v)?,
            "head_variant" => self.head_variant = p(key, v)?,
            "no_knowledge" => self.no_knowledge = p(key, v)?,
            "lambda" => self.lambda = p(key, v)?,
            "lr_backbone" => self.lr_backbone = p(key, v)?,
            "lr_recurrent" => self.lr_recurrent = p(key, v)?,
            "lr_head" => self.lr_head = p(key, v)?,
            "codedkt_lr_recurrent" => self.codedkt_lr_recurrent = p(key, v)?,
            "codedkt_lr_head" => self.codedkt_lr_head = p(key, v)?,
            "weight_decay" => self.weight_decay = p(key, v)?,
            "warmup_frac" => self.warmup_frac = p(key, v)?,
            "grad_clip" => self.grad_clip = p(key, v)?,
            "plateau_factor" => self.plateau_factor = p(key, v)?,
            "plateau_patience" => self.plateau_patience = p(key, v)?,
            "batch_size" => self.batch_size = p(key, v)?,
            "epochs" => self.epochs = p(key, v)?,
            "max_steps" => self.max_steps = p(key, v)?,
            "patience" => self.patience = p(key, v)?,
            "folds" => self.folds = p(key, v)?,
            "repeat_over" => self.repeat_over = p(key, v)?,
            "seed" => self.seed = p(key, v)?,
            "decoding" => self.decoding = p(key, v)?,
            "max_gen_len" => self.max_gen_len = p(key, v)?,
            "rollout" => self.rollout = p(key, v)?,
            "width" => self.width = p(key, v)?,
            "layers" => self.layers = p(key, v)?,
            "heads" => self.heads = p(key, v)?,
            "vocab_size" => self.vocab_size = p(key, v)?,
            "max_positions" => self.max_positions = p(key, v)?,
            "d_code" => self.d_code = p(key, v)?,
            "state_uses_score" => self.state_uses_score = p(key, v)?,
            "train_code_encoder" => self.train_code_encoder = p(key, v)?,
            "first_submission_only" => self.first_submission_only = p(key, v)?,
            "auc_average" => self.auc_average = p(key, v)?,
            "threshold" => self.threshold = p(key, v)?,
            "generate_eval" => self.generate_eval = p(key, v)?,
            "backend" => self.backend = v.into(),
            "timeout_s" => self.timeout_s = p(key, v)?,
            "compile_cmd" => self.compile_cmd = v.into(),
            "run_cmd" => self.run_cmd = v.into(),
            "source_name" => self.source_name = v.into(),
            "compare" => self.compare = v.into(),
            "lora_r" => self.lora_r = p(key, v)?,
            "lora_alpha" => self.lora_alpha = p(key, v)?,
            "lora_dropout" => self.lora_dropout = p(key, v)?,
            "quantization_bits" => self.quantization_bits = p(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Parses config text on top of the selected profile, then applies
    /// `overrides` in order. The result is validated.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            pairs.push((k.to_string(), v.trim().to_string()));
        }
        pairs.extend(overrides.iter().cloned());
        let profile = match pairs.iter().rev().find(|(k, _)| k == "profile") {
            Some((k, v)) => v.parse::<Profile>().map_err(|m| ConfigError::BadValue {
                key: k.clone(),
                value: v.clone(),
                message: m,
            })?,
            None => Profile::Paper,
        };
        let mut cfg = Self::profile(profile);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file (or starts from defaults when `path` is `None`),
    /// applies `--set` overrides and the `TIKTOC_SEED` environment variable.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut all = overrides.to_vec();
        if let Ok(seed) = std::env::var("TIKTOC_SEED") {
            all.push(("seed".into(), seed));
        }
        Self::parse(&text, &all)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_kv_string(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = json {
            out.push_str(&format!("profile = {}\n", self.profile));
            for key in FIELD_ORDER {
                if *key == "profile" {
                    continue;
                }
                let v = &map[*key];
                let text = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                out.push_str(&format!("{key} = {text}\n"));
            }
        }
        out
    }
}

const FIELD_ORDER: &[&str] = &[
    "profile",
    "model",
    "head_variant",
    "no_knowledge",
    "lambda",
    "lr_backbone",
    "lr_recurrent",
    "lr_head",
    "codedkt_lr_recurrent",
    "codedkt_lr_head",
    "weight_decay",
    "warmup_frac",
    "grad_clip",
    "plateau_factor",
    "plateau_patience",
    "batch_size",
    "epochs",
    "max_steps",
    "patience",
    "folds",
    "repeat_over",
    "seed",
    "decoding",
    "max_gen_len",
    "rollout",
    "width",
    "layers",
    "heads",
    "vocab_size",
    "max_positions",
    "d_code",
    "state_uses_score",
    "train_code_encoder",
    "first_submission_only",
    "auc_average",
    "threshold",
    "generate_eval",
    "backend",
    "timeout_s",
    "compile_cmd",
    "run_cmd",
    "source_name",
    "compare",
    "lora_r",
    "lora_alpha",
    "lora_dropout",
    "quantization_bits",
];

/// Splits a `--set key=value` argument.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_values() {
        let c = ExperimentConfig::default();
        assert_eq!((c.lambda, c.batch_size, c.epochs), (0.5, 32, 20));
        assert_eq!(c.rates(), (1e-5, 5e-5, 1e-4));
        let d = ExperimentConfig { model: ModelKind::CodedktTc, ..c.clone() };
        assert_eq!(d.rates(), (1e-5, 1.5e-3, 1e-3));
        assert_eq!((c.lora_r, c.lora_alpha), (128, 256));
        c.validate().unwrap();
    }

    #[test]
    fn profile_applies_first() {
        let c = ExperimentConfig::parse("epochs = 3\nprofile = desk\n# note\n", &[]).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.width, 64);
    }

    #[test]
    fn overrides_win() {
        let c = ExperimentConfig::parse("lambda = 0.2", &[("lambda".into(), "0.7".into())]).unwrap();
        assert_eq!(c.lambda, 0.7);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            ExperimentConfig::parse("lambda = 1.5", &[]),
            Err(ConfigError::Invalid("lambda must lie in [0, 1], got 1.5".into()))
        );
        assert!(matches!(ExperimentConfig::parse("colour = red", &[]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(ExperimentConfig::parse("model = llama", &[]), Err(ConfigError::BadValue { .. })));
        assert_eq!(ExperimentConfig::parse("just words", &[]), Err(ConfigError::Syntax { line: 1 }));
        assert!(ExperimentConfig::parse("folds = 1", &[]).is_err());
        assert!(ExperimentConfig::parse("lr_head = 0", &[]).is_err());
    }

    #[test]
    fn canonical_text_roundtrips() {
        let mut c = ExperimentConfig::profile(Profile::Desk);
        c.model = ModelKind::CodedktTc;
        c.run_cmd = "java -cp {dir} Main".into();
        let back = ExperimentConfig::parse(&c.to_kv_string(), &[]).unwrap();
        assert_eq!(back, c);
    }
}
