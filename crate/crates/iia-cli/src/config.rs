//! Run configuration: method identifiers, flag parsing, and the TOML config
//! file that command-line flags override.

use std::path::PathBuf;

use serde::Deserialize;

use iia::io::{DatasetKind, DatasetSpec};
use iia::{Preset, DEFAULT_STEPS};
use iia_models::{known_model_ids, ArchKind, ModelMeta};

use crate::CliError;

/// Every attribution method the toolkit exposes on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodId {
    Iia2,
    Iia3,
    Img,
    Act,
    Iia2Lm1,
    Ig,
    GradCam,
    Rollout,
}

/// The fixed method set the ablation command compares.
pub const ABLATION_METHODS: [MethodId; 6] = [
    MethodId::Img,
    MethodId::Act,
    MethodId::Iia2,
    MethodId::Iia3,
    MethodId::Iia2Lm1,
    MethodId::Ig,
];

impl MethodId {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "iia2" => Ok(Self::Iia2),
            "iia3" => Ok(Self::Iia3),
            "img" => Ok(Self::Img),
            "act" => Ok(Self::Act),
            "iia2_lm1" => Ok(Self::Iia2Lm1),
            "ig" => Ok(Self::Ig),
            "gradcam" => Ok(Self::GradCam),
            "rollout" => Ok(Self::Rollout),
            other => Err(CliError::Usage(format!(
                "unknown method '{other}' (expected iia2, iia3, img, act, iia2_lm1, ig, gradcam, or rollout)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Iia2 => "iia2",
            Self::Iia3 => "iia3",
            Self::Img => "img",
            Self::Act => "act",
            Self::Iia2Lm1 => "iia2_lm1",
            Self::Ig => "ig",
            Self::GradCam => "gradcam",
            Self::Rollout => "rollout",
        }
    }

    /// The interpolation preset behind this method, when it is one.
    pub fn preset(self) -> Option<Preset> {
        match self {
            Self::Iia2 => Some(Preset::Iia2),
            Self::Iia3 => Some(Preset::Iia3),
            Self::Img => Some(Preset::Img),
            Self::Act => Some(Preset::Act),
            Self::Iia2Lm1 => Some(Preset::Iia2Lm1),
            Self::Ig | Self::GradCam | Self::Rollout => None,
        }
    }
}

/// Reject method/model pairings before any work starts.
pub fn check_compat(method: MethodId, meta: &ModelMeta) -> Result<(), CliError> {
    match method {
        MethodId::GradCam if meta.arch != ArchKind::Cnn => Err(CliError::Usage(format!(
            "gradcam reads convolutional feature maps; {} is not a CNN",
            meta.id
        ))),
        MethodId::Rollout if meta.arch != ArchKind::Vit => Err(CliError::Usage(format!(
            "rollout walks attention matrices; {} is not a transformer",
            meta.id
        ))),
        MethodId::Iia3 | MethodId::Iia2Lm1 if meta.layer_count < 2 => Err(CliError::Usage(format!(
            "{} needs a penultimate layer; {} exposes {} tap(s)",
            method.name(),
            meta.id,
            meta.layer_count
        ))),
        _ => Ok(()),
    }
}

/// How the explained class is chosen, before a concrete index is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassChoice {
    Predicted,
    /// The ground-truth label (from the dataset, or `--label` for raw images).
    Target,
}

impl ClassChoice {
    fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "predicted" => Ok(Self::Predicted),
            "target" => Ok(Self::Target),
            other => Err(CliError::Usage(format!(
                "unknown class selector '{other}' (expected predicted or target)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Predicted => "predicted",
            Self::Target => "target",
        }
    }
}

/// Shared flags accepted by every subcommand. Unset flags fall back to the
/// config file (when given), then to built-in defaults.
#[derive(Debug, Clone, clap::Args)]
pub struct SharedArgs {
    /// Model id, e.g. toy_cnn, toy_vit, sanity_cnn, resnet101, vit_base_patch16
    #[arg(long)]
    pub model: Option<String>,

    /// Attribution method(s), comma separated: iia2, iia3, img, act, iia2_lm1, ig, gradcam, rollout
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,

    /// Interpolation steps per active layer
    #[arg(long)]
    pub n: Option<usize>,

    /// Explained class: predicted or target
    #[arg(long)]
    pub class: Option<String>,

    /// Class index used with `--class target` when the input has no label
    #[arg(long)]
    pub label: Option<usize>,

    /// Dataset as `kind:root` (kinds: image_folder, imagenet_val, in_seg, coco_masks, voc_masks); a bare path means image_folder
    #[arg(long)]
    pub dataset: Option<String>,

    /// Subset as `SIZE` (first SIZE names) or `SIZE@SEED` (seeded draw)
    #[arg(long)]
    pub subset: Option<String>,

    /// Grid points per forward/backward accumulation chunk
    #[arg(long)]
    pub batch: Option<usize>,

    /// Output directory for archives, renders, and reports
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Seed for model initialization and synthetic inputs
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads over images; each worker owns a model clone
    #[arg(long)]
    pub workers: Option<usize>,

    /// TOML config file; command-line flags win over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    /// Comma-separated method list, same syntax as the flag.
    method: Option<String>,
    n: Option<usize>,
    class: Option<String>,
    label: Option<usize>,
    batch: Option<usize>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    dataset: Option<FileDataset>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDataset {
    kind: Option<String>,
    root: PathBuf,
    labels_csv: Option<PathBuf>,
    subset_size: Option<usize>,
    subset_seed: Option<u64>,
    subset_names: Option<Vec<String>>,
}

/// A fully resolved run: flag values override file values override defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: String,
    pub methods: Vec<MethodId>,
    pub n: usize,
    /// `None` means the command's own default (evaluate reports both).
    pub class: Option<ClassChoice>,
    pub label: Option<usize>,
    pub dataset: Option<DatasetSpec>,
    pub batch: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

/// Parse `kind:root`; a bare path is an image folder.
fn parse_dataset_flag(value: &str) -> Result<DatasetSpec, CliError> {
    if let Some((kind, root)) = value.split_once(':') {
        if !kind.contains('/') {
            let kind = DatasetKind::parse(kind).map_err(|e| CliError::Usage(e.to_string()))?;
            return Ok(DatasetSpec::new(kind, root));
        }
    }
    Ok(DatasetSpec::new(DatasetKind::ImageFolder, value))
}

/// Parse `SIZE` or `SIZE@SEED`.
fn parse_subset_flag(value: &str) -> Result<(usize, Option<u64>), CliError> {
    let (size, seed) = match value.split_once('@') {
        Some((size, seed)) => {
            let seed = seed.parse::<u64>().map_err(|_| {
                CliError::Usage(format!("subset seed '{seed}' is not an integer"))
            })?;
            (size, Some(seed))
        }
        None => (value, None),
    };
    let size = size
        .parse::<usize>()
        .map_err(|_| CliError::Usage(format!("subset size '{size}' is not an integer")))?;
    Ok((size, seed))
}

/// Merge flags, config file, and per-command defaults into a [`RunConfig`].
pub fn resolve(
    args: &SharedArgs,
    default_model: &str,
    default_methods: &[MethodId],
) -> Result<RunConfig, CliError> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let model = args
        .model
        .clone()
        .or(file.model)
        .unwrap_or_else(|| default_model.to_string());
    if !known_model_ids().contains(&model.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown model '{model}' (known: {})",
            known_model_ids().join(", ")
        )));
    }

    let method_names: Vec<String> = match (&args.method, &file.method) {
        (Some(flags), _) => flags.clone(),
        (None, Some(listed)) => listed.split(',').map(|s| s.trim().to_string()).collect(),
        (None, None) => default_methods.iter().map(|m| m.name().to_string()).collect(),
    };
    let methods = method_names
        .iter()
        .map(|name| MethodId::parse(name))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("no method given".into()));
    }

    let class = match args.class.clone().or(file.class) {
        Some(name) => Some(ClassChoice::parse(&name)?),
        None => None,
    };

    let mut dataset = match (&args.dataset, file.dataset) {
        (Some(flag), _) => Some(parse_dataset_flag(flag)?),
        (None, Some(fd)) => {
            let kind = match fd.kind {
                Some(name) => DatasetKind::parse(&name).map_err(|e| CliError::Usage(e.to_string()))?,
                None => DatasetKind::ImageFolder,
            };
            let mut spec = DatasetSpec::new(kind, fd.root);
            spec.labels_csv = fd.labels_csv;
            spec.subset_size = fd.subset_size;
            spec.subset_seed = fd.subset_seed;
            spec.subset_names = fd.subset_names;
            Some(spec)
        }
        (None, None) => None,
    };
    if let Some(subset) = &args.subset {
        let (size, seed) = parse_subset_flag(subset)?;
        if let Some(spec) = dataset.as_mut() {
            spec.subset_size = Some(size);
            if seed.is_some() {
                spec.subset_seed = seed;
            }
        }
    }

    let n = args.n.or(file.n).unwrap_or(DEFAULT_STEPS);
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let workers = args.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let batch = args.batch.or(file.batch).unwrap_or(32);
    if batch == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }

    Ok(RunConfig {
        model,
        methods,
        n,
        class,
        label: args.label.or(file.label),
        dataset,
        batch,
        out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("iia-out")),
        seed: args.seed.or(file.seed).unwrap_or(0),
        workers,
    })
}

/// The subset size requested on the command line, if any; sanity runs use it
/// to cap how many test images get attribution maps.
pub fn subset_size_of(args: &SharedArgs) -> Result<Option<usize>, CliError> {
    match &args.subset {
        Some(s) => Ok(Some(parse_subset_flag(s)?.0)),
        None => Ok(None),
    }
}
