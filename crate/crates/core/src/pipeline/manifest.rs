//! The augmented training-set manifest and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationPlan;
use crate::dataset::{parse_example_id, ClassTaxonomy, ExampleId, LesionClass, Origin, Subset};

const MAGIC: &str = "# oralfuse augmented manifest";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ManifestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "augmented manifest line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ManifestError {}

/// Per-class counts at each stage of training-set construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub original: usize,
    pub expanded: usize,
    pub oversampled: usize,
}

/// Final training set plus the recipe that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedManifest {
    pub split_seed: u64,
    pub taxonomy: ClassTaxonomy,
    pub augmentation_enabled: bool,
    pub plan: AugmentationPlan,
    pub oversample_threshold: usize,
    pub oversample_seed: u64,
    /// Validation and test counts copied from the split manifest.
    pub untouched: BTreeMap<(LesionClass, Subset), usize>,
    /// Sorted by id.
    pub examples: Vec<(ExampleId, LesionClass, Origin)>,
}

impl AugmentedManifest {
    pub fn stage_counts(&self) -> BTreeMap<LesionClass, StageCounts> {
        let mut out: BTreeMap<LesionClass, StageCounts> =
            self.taxonomy.classes().iter().map(|&c| (c, StageCounts::default())).collect();
        for (_, class, origin) in &self.examples {
            let c = out.entry(*class).or_default();
            c.oversampled += 1;
            if *origin != Origin::Duplicated {
                c.expanded += 1;
            }
            if *origin == Origin::Original {
                c.original += 1;
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "version\t1");
        let _ = writeln!(out, "split_seed\t{}", self.split_seed);
        let _ = writeln!(out, "taxonomy\t{}\t{}", self.taxonomy.name(), self.taxonomy.class_list());
        let state = if self.augmentation_enabled { "enabled" } else { "disabled" };
        let _ = writeln!(out, "augmentation\t{state}");
        let plan = serde_json::to_string(&self.plan).expect("plan serializes");
        let _ = writeln!(out, "plan\t{plan}");
        let _ = writeln!(out, "oversample_threshold\t{}", self.oversample_threshold);
        let _ = writeln!(out, "oversample_seed\t{}", self.oversample_seed);
        for (class, c) in self.stage_counts() {
            let _ = writeln!(out, "count\t{class}\toriginal\t{}", c.original);
            let _ = writeln!(out, "count\t{class}\texpanded\t{}", c.expanded);
            let _ = writeln!(out, "count\t{class}\toversampled\t{}", c.oversampled);
        }
        for ((class, subset), n) in &self.untouched {
            let _ = writeln!(out, "untouched\t{class}\t{}\t{n}", subset.as_str());
        }
        let _ = writeln!(out, "examples\t{}", self.examples.len());
        let _ = writeln!(out, "---");
        for (id, class, origin) in &self.examples {
            let _ = writeln!(out, "{id}\t{class}\t{}", origin.as_str());
        }
        out
    }

    /// Parses the text form and checks every declared count against the body.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let err = |line: usize, message: String| ManifestError { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        if !matches!(lines.next(), Some((_, MAGIC))) {
            return Err(err(1, "missing manifest header".into()));
        }
        let mut split_seed = None;
        let mut taxonomy = None;
        let mut enabled = None;
        let mut plan = None;
        let mut threshold = None;
        let mut oversample_seed = None;
        let mut declared: BTreeMap<(LesionClass, String), usize> = BTreeMap::new();
        let mut untouched = BTreeMap::new();
        let mut total = None;
        let mut body = false;
        for (n, line) in lines.by_ref() {
            if line == "---" {
                body = true;
                break;
            }
            let f: Vec<&str> = line.splitn(2, '\t').collect();
            let (key, rest) = match f.as_slice() {
                [k, r] => (*k, *r),
                _ => return Err(err(n, format!("malformed header line `{line}`"))),
            };
            let int = |s: &str| s.parse::<u64>().map_err(|_| err(n, format!("bad integer `{s}`")));
            let class = |s: &str| s.parse::<LesionClass>().map_err(|e| err(n, e.to_string()));
            let parts: Vec<&str> = rest.split('\t').collect();
            match (key, parts.as_slice()) {
                ("version", ["1"]) => {}
                ("split_seed", [s]) => split_seed = Some(int(s)?),
                ("taxonomy", [name, classes]) => {
                    taxonomy = Some(ClassTaxonomy::from_parts(name, classes).map_err(|e| err(n, e.to_string()))?)
                }
                ("augmentation", ["enabled"]) => enabled = Some(true),
                ("augmentation", ["disabled"]) => enabled = Some(false),
                ("plan", _) => {
                    let p: AugmentationPlan =
                        serde_json::from_str(rest).map_err(|e| err(n, format!("plan: {e}")))?;
                    p.validate().map_err(|e| err(n, e.to_string()))?;
                    plan = Some(p);
                }
                ("oversample_threshold", [s]) => threshold = Some(int(s)? as usize),
                ("oversample_seed", [s]) => oversample_seed = Some(int(s)?),
                ("count", [c, stage @ ("original" | "expanded" | "oversampled"), v]) => {
                    declared.insert((class(c)?, stage.to_string()), int(v)? as usize);
                }
                ("untouched", [c, s, v]) => {
                    let subset: Subset = s.parse().map_err(|e| err(n, e))?;
                    if subset == Subset::Train {
                        return Err(err(n, "training counts are not untouched".into()));
                    }
                    untouched.insert((class(c)?, subset), int(v)? as usize);
                }
                ("examples", [s]) => total = Some(int(s)? as usize),
                _ => return Err(err(n, format!("unrecognised header line `{line}`"))),
            }
        }
        if !body {
            return Err(err(0, "missing `---` separator".into()));
        }
        let missing = |what: &str| err(0, format!("header lacks `{what}`"));
        let taxonomy = taxonomy.ok_or_else(|| missing("taxonomy"))?;
        let augmentation_enabled = enabled.ok_or_else(|| missing("augmentation"))?;
        let mut examples: Vec<(ExampleId, LesionClass, Origin)> = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let [id, c, o] = f.as_slice() else {
                return Err(err(n, format!("expected 3 tab-separated fields, got `{line}`")));
            };
            let (id, id_class, _, id_origin) = parse_example_id(id).map_err(|m| err(n, m))?;
            let c: LesionClass = c.parse().map_err(|e: crate::dataset::DatasetError| err(n, e.to_string()))?;
            let o: Origin = o.parse().map_err(|e| err(n, e))?;
            if c != id_class || o != id_origin || !taxonomy.contains(c) {
                return Err(err(n, "class or origin disagrees with the id or taxonomy".into()));
            }
            if !augmentation_enabled && id.augmentation_copy().is_some() {
                return Err(err(n, "augmented copy listed while augmentation is disabled".into()));
            }
            if let Some((prev, _, _)) = examples.last() {
                if *prev >= id {
                    return Err(err(n, "ids must be strictly increasing".into()));
                }
            }
            examples.push((id, c, o));
        }
        let manifest = AugmentedManifest {
            split_seed: split_seed.ok_or_else(|| missing("split_seed"))?,
            taxonomy,
            augmentation_enabled,
            plan: plan.ok_or_else(|| missing("plan"))?,
            oversample_threshold: threshold.ok_or_else(|| missing("oversample_threshold"))?,
            oversample_seed: oversample_seed.ok_or_else(|| missing("oversample_seed"))?,
            untouched,
            examples,
        };
        if total != Some(manifest.examples.len()) {
            return Err(err(0, "declared example total does not match body".into()));
        }
        let mut actual = BTreeMap::new();
        for (class, c) in manifest.stage_counts() {
            actual.insert((class, "original".to_string()), c.original);
            actual.insert((class, "expanded".to_string()), c.expanded);
            actual.insert((class, "oversampled".to_string()), c.oversampled);
        }
        if actual != declared {
            return Err(err(0, "declared per-class counts do not match body".into()));
        }
        let ids: std::collections::BTreeSet<&ExampleId> = manifest.examples.iter().map(|e| &e.0).collect();
        if let Some(orphan) = manifest.examples.iter().find(|e| !ids.contains(&e.0.pixel_source())) {
            return Err(err(0, format!("{} duplicates an example that is not listed", orphan.0)));
        }
        Ok(manifest)
    }
}

/// Per-class counts for the three split subsets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Wall-clock seconds per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub prepare: Option<f64>,
    pub augment: Option<f64>,
    pub train: Option<f64>,
    pub evaluate: Option<f64>,
}

/// Summary of one pipeline run, rewritten after every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub seeds: super::ResolvedSeeds,
    /// The augmentation plan as executed, seed included.
    pub plan: AugmentationPlan,
    pub split_counts: BTreeMap<String, SubsetCounts>,
    pub training_counts: BTreeMap<String, StageCounts>,
    pub artifacts: BTreeMap<String, String>,
    pub timing: Timing,
}
