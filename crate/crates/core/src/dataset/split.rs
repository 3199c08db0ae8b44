use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AgeScaler, ClassTaxonomy, DatasetError, ExampleId, LabeledExample, LesionClass};
use crate::seed::{derive_named, rng_from};

const RATIO_TOLERANCE: f64 = 1e-9;
const MIN_CLASS_SIZE: usize = 3;
const MANIFEST_MAGIC: &str = "# oralfuse split manifest";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Validation, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
            Subset::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subset::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown subset `{s}`"))
    }
}

/// Whether stratification moves single images or whole patients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    #[default]
    Image,
    Patient,
}

impl Grouping {
    fn as_str(self) -> &'static str {
        match self {
            Grouping::Image => "image",
            Grouping::Patient => "patient",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Self {
            train,
            validation,
            test,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = self.as_array();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DatasetError::SplitConfig(format!(
                "ratios must be non-negative, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > RATIO_TOLERANCE {
            return Err(DatasetError::SplitConfig(format!(
                "ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

/// Largest-remainder apportionment of `n` items over the three subsets.
///
/// Each subset first receives the floor of its quota; leftover items go to the
/// largest fractional parts, ties resolved in subset order.
pub fn apportion(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = ratios.as_array().map(|r| n as f64 * r);
    // quotas like 13.999999999999998 are integers in disguise
    let floors = quotas.map(|q| (q + RATIO_TOLERANCE).floor().max(0.0) as usize);
    let mut counts = floors;
    let assigned: usize = counts.iter().sum();
    let mut leftover = n.saturating_sub(assigned);
    let mut order = [0usize, 1, 2];
    let frac = |i: usize| (quotas[i] - floors[i] as f64).max(0.0);
    order.sort_by(|&a, &b| {
        let (fa, fb) = (frac(a), frac(b));
        if (fa - fb).abs() <= RATIO_TOLERANCE {
            a.cmp(&b)
        } else {
            fb.partial_cmp(&fa).expect("finite quotas")
        }
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Auditable record of which example landed in which subset.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub taxonomy: ClassTaxonomy,
    pub ratios: SplitRatios,
    pub grouping: Grouping,
    /// Age statistics the metadata was normalised with.
    pub age_range: Option<AgeScaler>,
    assignments: BTreeMap<ExampleId, (LesionClass, Subset)>,
}

impl SplitManifest {
    pub fn assignments(&self) -> &BTreeMap<ExampleId, (LesionClass, Subset)> {
        &self.assignments
    }

    pub fn subset_of(&self, id: &ExampleId) -> Option<Subset> {
        self.assignments.get(id).map(|&(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Ids in the given subset, sorted.
    pub fn ids_in(&self, subset: Subset) -> Vec<&ExampleId> {
        self.assignments
            .iter()
            .filter(|(_, &(_, s))| s == subset)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn per_class_counts(&self) -> BTreeMap<(LesionClass, Subset), usize> {
        let mut counts = BTreeMap::new();
        for &class in self.taxonomy.classes() {
            for subset in Subset::ALL {
                counts.insert((class, subset), 0);
            }
        }
        for &(class, subset) in self.assignments.values() {
            *counts.entry((class, subset)).or_insert(0) += 1;
        }
        counts
    }

    pub fn with_age_range(mut self, scaler: AgeScaler) -> Self {
        self.age_range = Some(scaler);
        self
    }

    /// Line-oriented text form. Stable for identical contents.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let r = self.ratios;
        let _ = writeln!(out, "{MANIFEST_MAGIC}");
        let _ = writeln!(out, "version\t1");
        let _ = writeln!(out, "seed\t{}", self.seed);
        let _ = writeln!(out, "taxonomy\t{}\t{}", self.taxonomy.name(), self.taxonomy.class_list());
        let _ = writeln!(out, "ratios\t{:?}\t{:?}\t{:?}", r.train, r.validation, r.test);
        let _ = writeln!(out, "grouping\t{}", self.grouping.as_str());
        match self.age_range {
            Some(a) => {
                let _ = writeln!(out, "age_range\t{:?}\t{:?}", a.min, a.max);
            }
            None => {
                let _ = writeln!(out, "age_range\tnone");
            }
        }
        for ((class, subset), n) in self.per_class_counts() {
            let _ = writeln!(out, "count\t{class}\t{}\t{n}", subset.as_str());
        }
        let _ = writeln!(out, "examples\t{}", self.assignments.len());
        let _ = writeln!(out, "---");
        for (id, (class, subset)) in &self.assignments {
            let _ = writeln!(out, "{id}\t{class}\t{}", subset.as_str());
        }
        out
    }

    /// Parses the text form, checking the header counts against the body.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let err = |line: usize, message: String| DatasetError::Manifest { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MANIFEST_MAGIC)) => {}
            _ => return Err(err(1, "missing manifest header".into())),
        }

        let mut seed = None;
        let mut taxonomy = None;
        let mut ratios = None;
        let mut grouping = None;
        let mut age_range = None;
        let mut declared_counts = BTreeMap::new();
        let mut declared_total = None;
        let mut body_started = false;

        for (n, line) in lines.by_ref() {
            if line == "---" {
                body_started = true;
                break;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| -> Result<f64, DatasetError> {
                s.parse::<f64>().map_err(|_| err(n, format!("bad number `{s}`")))
            };
            match fields.as_slice() {
                ["version", "1"] => {}
                ["version", v] => return Err(err(n, format!("unsupported version {v}"))),
                ["seed", s] => {
                    seed = Some(s.parse::<u64>().map_err(|_| err(n, format!("bad seed `{s}`")))?)
                }
                ["taxonomy", name, classes] => {
                    taxonomy = Some(
                        ClassTaxonomy::from_parts(name, classes)
                            .map_err(|e| err(n, e.to_string()))?,
                    )
                }
                ["ratios", a, b, c] => {
                    ratios = Some(
                        SplitRatios::new(num(a)?, num(b)?, num(c)?)
                            .map_err(|e| err(n, e.to_string()))?,
                    )
                }
                ["grouping", "image"] => grouping = Some(Grouping::Image),
                ["grouping", "patient"] => grouping = Some(Grouping::Patient),
                ["age_range", "none"] => age_range = Some(None),
                ["age_range", lo, hi] => {
                    age_range = Some(Some(AgeScaler {
                        min: num(lo)?,
                        max: num(hi)?,
                    }))
                }
                ["count", class, subset, count] => {
                    let class: LesionClass = class.parse().map_err(|e: DatasetError| err(n, e.to_string()))?;
                    let subset: Subset = subset.parse().map_err(|e| err(n, e))?;
                    let count: usize = count.parse().map_err(|_| err(n, format!("bad count `{count}`")))?;
                    declared_counts.insert((class, subset), count);
                }
                ["examples", count] => {
                    declared_total = Some(
                        count
                            .parse::<usize>()
                            .map_err(|_| err(n, format!("bad count `{count}`")))?,
                    )
                }
                _ => return Err(err(n, format!("unrecognised header line `{line}`"))),
            }
        }
        if !body_started {
            return Err(err(0, "missing `---` separator".into()));
        }
        let missing = |what: &str| err(0, format!("header lacks `{what}`"));
        let taxonomy = taxonomy.ok_or_else(|| missing("taxonomy"))?;

        let mut assignments = BTreeMap::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, class, subset] = fields.as_slice() else {
                return Err(err(n, format!("expected 3 tab-separated fields, got `{line}`")));
            };
            let (id, id_class, _, origin) = super::parse_example_id(id).map_err(|m| err(n, m))?;
            if origin != super::Origin::Original {
                return Err(err(n, format!("{id} is not an original image")));
            }
            let class: LesionClass = class.parse().map_err(|e: DatasetError| err(n, e.to_string()))?;
            if class != id_class || !taxonomy.contains(class) {
                return Err(err(n, format!("class {class} does not match id or taxonomy")));
            }
            let subset: Subset = subset.parse().map_err(|e| err(n, e))?;
            if assignments.insert(id.clone(), (class, subset)).is_some() {
                return Err(DatasetError::DuplicateExample(id.to_string()));
            }
        }

        let manifest = SplitManifest {
            seed: seed.ok_or_else(|| missing("seed"))?,
            taxonomy,
            ratios: ratios.ok_or_else(|| missing("ratios"))?,
            grouping: grouping.ok_or_else(|| missing("grouping"))?,
            age_range: age_range.ok_or_else(|| missing("age_range"))?,
            assignments,
        };
        if declared_total != Some(manifest.len()) {
            return Err(err(0, "declared example total does not match body".into()));
        }
        let actual = manifest.per_class_counts();
        if declared_counts != actual {
            return Err(err(0, "declared per-class counts do not match body".into()));
        }
        Ok(manifest)
    }
}

/// Per-class stratified split with seeded shuffling and largest-remainder
/// apportionment.
pub fn stratified_split(
    examples: &[LabeledExample],
    taxonomy: &ClassTaxonomy,
    ratios: SplitRatios,
    seed: u64,
    grouping: Grouping,
) -> Result<SplitManifest, DatasetError> {
    ratios.validate()?;
    let mut by_class: BTreeMap<LesionClass, Vec<&LabeledExample>> =
        taxonomy.classes().iter().map(|&c| (c, Vec::new())).collect();
    for ex in examples {
        by_class
            .get_mut(&ex.label)
            .ok_or_else(|| {
                DatasetError::Split(format!("example {} has label {} outside the taxonomy", ex.id, ex.label))
            })?
            .push(ex);
    }
    for (&class, members) in &by_class {
        if members.len() < MIN_CLASS_SIZE {
            return Err(DatasetError::Split(format!(
                "class {class} has {} examples; at least {MIN_CLASS_SIZE} are required",
                members.len()
            )));
        }
    }

    let mut assignments = BTreeMap::new();
    match grouping {
        Grouping::Image => {
            for (class, mut members) in by_class {
                members.sort_by(|a, b| a.id.cmp(&b.id));
                let mut rng = rng_from(derive_named(seed, class.folder_name()));
                members.shuffle(&mut rng);
                let [n_train, n_val, _] = apportion(members.len(), &ratios);
                for (i, ex) in members.into_iter().enumerate() {
                    let subset = if i < n_train {
                        Subset::Train
                    } else if i < n_train + n_val {
                        Subset::Validation
                    } else {
                        Subset::Test
                    };
                    if assignments.insert(ex.id.clone(), (class, subset)).is_some() {
                        return Err(DatasetError::DuplicateExample(ex.id.to_string()));
                    }
                }
            }
        }
        Grouping::Patient => split_by_patient(examples, taxonomy, &ratios, seed, &mut assignments)?,
    }

    Ok(SplitManifest {
        seed,
        taxonomy: taxonomy.clone(),
        ratios,
        grouping,
        age_range: None,
        assignments,
    })
}

/// Keeps every image of a patient in one subset. Each patient group is
/// stratified by the label of its first image and handed to whichever subset
/// is furthest below its image quota.
fn split_by_patient(
    examples: &[LabeledExample],
    taxonomy: &ClassTaxonomy,
    ratios: &SplitRatios,
    seed: u64,
    assignments: &mut BTreeMap<ExampleId, (LesionClass, Subset)>,
) -> Result<(), DatasetError> {
    let mut groups: BTreeMap<&str, Vec<&LabeledExample>> = BTreeMap::new();
    for ex in examples {
        groups.entry(ex.patient_id.as_str()).or_default().push(ex);
    }
    let mut strata: BTreeMap<LesionClass, Vec<Vec<&LabeledExample>>> = BTreeMap::new();
    for (_, mut members) in groups {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        strata.entry(members[0].label).or_default().push(members);
    }
    for &class in taxonomy.classes() {
        let Some(mut groups) = strata.remove(&class) else {
            continue;
        };
        let mut rng = rng_from(derive_named(seed, &format!("patient:{}", class.folder_name())));
        groups.shuffle(&mut rng);
        let total: usize = groups.iter().map(Vec::len).sum();
        let targets = apportion(total, ratios);
        let mut filled = [0usize; 3];
        for group in groups {
            let subset = Subset::ALL
                .into_iter()
                .max_by(|&a, &b| {
                    let da = targets[a.index()] as i64 - filled[a.index()] as i64;
                    let db = targets[b.index()] as i64 - filled[b.index()] as i64;
                    // earlier subset wins ties
                    da.cmp(&db).then(b.index().cmp(&a.index()))
                })
                .expect("three subsets");
            filled[subset.index()] += group.len();
            for ex in group {
                if assignments.insert(ex.id.clone(), (ex.label, subset)).is_some() {
                    return Err(DatasetError::DuplicateExample(ex.id.to_string()));
                }
            }
        }
    }
    Ok(())
}
