//! Discretization pipeline: quantile bucketizing of continuous features,
//! vocabulary encoding of categoricals, geospatial hashing, and assembly of
//! the fixed-length token-index sequence the embedding layer consumes.
//!
//! A fitted [`FeatureSchema`] is immutable; featurization is deterministic
//! and reproducible bit-exactly from the serialized manifest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{multi_resolution_indexes, GeoError, GeoHashConfig, GeoPoint};

/// Manifest format version accepted by this build.
pub const SCHEMA_VERSION: u32 = 1;

pub const MINUTES_PER_WEEK: u32 = 10_080;
pub const DAYS_PER_WEEK: u32 = 7;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit quantile bins for '{0}' from an empty sample")]
    EmptySample(String),
    #[error("bin count {0} must be at least 2")]
    InvalidBinCount(u32),
    #[error("unknown feature name '{0}'")]
    UnknownFeature(String),
    #[error("invalid request: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("schema i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The four calibration request types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestType {
    RidesPickup,
    RidesDropoff,
    DeliveryPickup,
    DeliveryDropoff,
}

impl RequestType {
    pub const ALL: [RequestType; 4] = [
        RequestType::RidesPickup,
        RequestType::RidesDropoff,
        RequestType::DeliveryPickup,
        RequestType::DeliveryDropoff,
    ];

    pub fn index(self) -> u32 {
        match self {
            RequestType::RidesPickup => 0,
            RequestType::RidesDropoff => 1,
            RequestType::DeliveryPickup => 2,
            RequestType::DeliveryDropoff => 3,
        }
    }

    pub fn is_delivery(self) -> bool {
        matches!(
            self,
            RequestType::DeliveryPickup | RequestType::DeliveryDropoff
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RequestType::RidesPickup => "rides_pickup",
            RequestType::RidesDropoff => "rides_dropoff",
            RequestType::DeliveryPickup => "delivery_pickup",
            RequestType::DeliveryDropoff => "delivery_dropoff",
        }
    }

    pub fn parse(s: &str) -> Option<RequestType> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

/// One ETA request as it arrives from upstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRequest {
    /// Unix seconds, UTC.
    pub timestamp: i64,
    pub origin: GeoPoint,
    pub dest: GeoPoint,
    pub request_type: RequestType,
    pub region_id: u32,
    /// km/h
    pub realtime_speed: f64,
    /// km/h
    pub historical_speed: f64,
    pub distance_m: f64,
    /// Routing-engine ETA, seconds.
    pub re_eta_s: f64,
}

impl RawRequest {
    /// Collects every violated field constraint instead of stopping at the
    /// first, so callers can report the full list.
    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut problems = Vec::new();
        if self.timestamp < 0 {
            problems.push(format!("timestamp must be >= 0, got {}", self.timestamp));
        }
        if !(self.re_eta_s > 0.0) || !self.re_eta_s.is_finite() {
            problems.push(format!("re_eta_s must be > 0, got {}", self.re_eta_s));
        }
        if !(self.distance_m >= 0.0) || !self.distance_m.is_finite() {
            problems.push(format!("distance_m must be >= 0, got {}", self.distance_m));
        }
        if !(self.realtime_speed >= 0.0) || !self.realtime_speed.is_finite() {
            problems.push(format!(
                "realtime_speed must be >= 0, got {}",
                self.realtime_speed
            ));
        }
        if !(self.historical_speed >= 0.0) || !self.historical_speed.is_finite() {
            problems.push(format!(
                "historical_speed must be >= 0, got {}",
                self.historical_speed
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FeatureError::Validation(problems))
        }
    }

    /// Day of week under the Monday=0 enumeration (epoch day zero was a
    /// Thursday).
    pub fn day_of_week(&self) -> u32 {
        (((self.timestamp / 86_400) + 3) % 7) as u32
    }

    pub fn minute_of_week(&self) -> u32 {
        self.day_of_week() * 1440 + ((self.timestamp % 86_400) / 60) as u32
    }
}

/// Fit interior edges at the k/v empirical quantiles (linear interpolation
/// between order statistics), deduplicated.
pub fn fit_quantile_bins(values: &[f64], bins: u32) -> Result<Vec<f64>, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptySample(String::new()));
    }
    if bins < 2 {
        return Err(FeatureError::InvalidBinCount(bins));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut edges = Vec::with_capacity(bins as usize - 1);
    for k in 1..bins {
        let pos = k as f64 / bins as f64 * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let edge = if lo + 1 < n {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[lo]
        };
        if edges.last().map_or(true, |&last| edge > last) {
            edges.push(edge);
        }
    }
    Ok(edges)
}

/// Bucket index of `x`: the count of edges strictly less than `x`.
pub fn bucketize(x: f64, edges: &[f64]) -> u32 {
    edges.partition_point(|&e| e < x) as u32
}

/// A fitted continuous feature: `edges.len() + 1` buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    pub name: String,
    pub edges: Vec<f64>,
}

impl ContinuousSpec {
    pub fn num_buckets(&self) -> usize {
        self.edges.len() + 1
    }
}

/// Vocabulary of a categorical feature. The reserved unknown index is the
/// last slot (`vocab_size`), so tables have `vocab_size + 1` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Vocabulary {
    /// Identity mapping for raw values in `0..size`.
    Range { size: u32 },
    /// Explicit raw-id to index map.
    Mapped { map: BTreeMap<u32, u32> },
}

impl Vocabulary {
    pub fn size(&self) -> u32 {
        match self {
            Vocabulary::Range { size } => *size,
            Vocabulary::Mapped { map } => map.len() as u32,
        }
    }

    pub fn unknown_index(&self) -> u32 {
        self.size()
    }

    pub fn encode(&self, raw: u32) -> u32 {
        match self {
            Vocabulary::Range { size } => {
                if raw < *size {
                    raw
                } else {
                    *size
                }
            }
            Vocabulary::Mapped { map } => *map.get(&raw).unwrap_or(&self.unknown_index()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    pub vocab: Vocabulary,
}

impl CategoricalSpec {
    pub fn table_rows(&self) -> usize {
        self.vocab.size() as usize + 1
    }
}

/// How one token of the layout resolves to embedding-table rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    /// One lookup in one table.
    Single { table: usize },
    /// Two lookups whose embeddings are summed (multiple feature hashing).
    HashPair { table1: usize, table2: usize },
}

/// One entry of the fixed token layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDef {
    pub name: String,
    pub kind: TokenKind,
}

/// An embedding table declared by the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSpec {
    pub name: String,
    pub rows: usize,
}

/// One embedding-table lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableRow {
    pub table: u16,
    pub row: u32,
}

/// The featurized form of one request: lookups in token-layout order
/// (hash-pair tokens contribute two consecutive entries), the calibration
/// type, and the routing-engine ETA carried through for the residual add.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenIndexes {
    pub lookups: Vec<TableRow>,
    pub type_id: u32,
    pub re_eta_s: f64,
}

/// Fitted discretization state and geospatial hash configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub geo: GeoHashConfig,
    /// minute_of_week, day_of_week, request_type, region
    pub categorical: Vec<CategoricalSpec>,
    /// re_eta_s, distance_m, realtime_speed, historical_speed
    pub continuous: Vec<ContinuousSpec>,
    pub request_types: Vec<String>,
}

const CAT_MINUTE: usize = 0;
const CAT_DAY: usize = 1;
const CAT_REQUEST_TYPE: usize = 2;
const CAT_REGION: usize = 3;

const CONT_RE_ETA: usize = 0;
const CONT_DISTANCE: usize = 1;
const CONT_REALTIME: usize = 2;
const CONT_HISTORICAL: usize = 3;

/// Bin counts used when fitting a schema.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitOptions {
    pub re_eta_bins: u32,
    pub distance_bins: u32,
    pub speed_bins: u32,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            re_eta_bins: 256,
            distance_bins: 256,
            speed_bins: 256,
        }
    }
}

impl FeatureSchema {
    /// Fit the discretization state from labeled or unlabeled requests.
    pub fn fit(
        requests: impl Iterator<Item = RawRequest>,
        geo: GeoHashConfig,
        options: FitOptions,
    ) -> Result<Self, FeatureError> {
        geo.validate()?;
        let mut re_eta = Vec::new();
        let mut distance = Vec::new();
        let mut realtime = Vec::new();
        let mut historical = Vec::new();
        let mut regions = std::collections::BTreeSet::new();
        for r in requests {
            re_eta.push(r.re_eta_s);
            distance.push(r.distance_m);
            realtime.push(r.realtime_speed);
            historical.push(r.historical_speed);
            regions.insert(r.region_id);
        }
        let named = |name: &str, values: &[f64], bins: u32| -> Result<ContinuousSpec, FeatureError> {
            let edges = fit_quantile_bins(values, bins).map_err(|e| match e {
                FeatureError::EmptySample(_) => FeatureError::EmptySample(name.to_string()),
                other => other,
            })?;
            Ok(ContinuousSpec {
                name: name.to_string(),
                edges,
            })
        };
        let region_map: BTreeMap<u32, u32> = regions
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, i as u32))
            .collect();
        Ok(Self {
            version: SCHEMA_VERSION,
            geo,
            categorical: vec![
                CategoricalSpec {
                    name: "minute_of_week".into(),
                    vocab: Vocabulary::Range {
                        size: MINUTES_PER_WEEK,
                    },
                },
                CategoricalSpec {
                    name: "day_of_week".into(),
                    vocab: Vocabulary::Range {
                        size: DAYS_PER_WEEK,
                    },
                },
                CategoricalSpec {
                    name: "request_type".into(),
                    vocab: Vocabulary::Range { size: 4 },
                },
                CategoricalSpec {
                    name: "region".into(),
                    vocab: Vocabulary::Mapped { map: region_map },
                },
            ],
            continuous: vec![
                named("re_eta_s", &re_eta, options.re_eta_bins)?,
                named("distance_m", &distance, options.distance_bins)?,
                named("realtime_speed", &realtime, options.speed_bins)?,
                named("historical_speed", &historical, options.speed_bins)?,
            ],
            request_types: RequestType::ALL.iter().map(|t| t.as_str().into()).collect(),
        })
    }

    /// Embedding tables in their canonical order: the temporal and
    /// categorical vocabularies, six geospatial tables per resolution
    /// (origin/dest/od, two hash instances each), and the bucketized
    /// continuous features.
    pub fn table_specs(&self) -> Vec<TableSpec> {
        let mut tables = Vec::new();
        tables.push(TableSpec {
            name: "minute_of_week".into(),
            rows: self.categorical[CAT_MINUTE].table_rows(),
        });
        tables.push(TableSpec {
            name: "day_of_week".into(),
            rows: self.categorical[CAT_DAY].table_rows(),
        });
        for &u in &self.geo.resolutions {
            for entity in ["origin", "dest", "od"] {
                let rows = if entity == "od" {
                    self.geo.pair_bins as usize
                } else {
                    self.geo.point_bins as usize
                };
                for hash in [1, 2] {
                    tables.push(TableSpec {
                        name: format!("geo_{entity}_u{u}_h{hash}"),
                        rows,
                    });
                }
            }
        }
        tables.push(TableSpec {
            name: "request_type".into(),
            rows: self.categorical[CAT_REQUEST_TYPE].table_rows(),
        });
        for spec in &self.continuous {
            tables.push(TableSpec {
                name: format!("{}_bucket", spec.name),
                rows: spec.num_buckets(),
            });
        }
        tables.push(TableSpec {
            name: "region".into(),
            rows: self.categorical[CAT_REGION].table_rows(),
        });
        tables
    }

    /// The fixed token layout. Every request featurizes to exactly this
    /// sequence of tokens.
    pub fn token_layout(&self) -> Vec<TokenDef> {
        let mut layout = Vec::new();
        layout.push(TokenDef {
            name: "minute_of_week".into(),
            kind: TokenKind::Single { table: 0 },
        });
        layout.push(TokenDef {
            name: "day_of_week".into(),
            kind: TokenKind::Single { table: 1 },
        });
        let mut t = 2usize;
        for &u in &self.geo.resolutions {
            for entity in ["origin", "dest", "od"] {
                layout.push(TokenDef {
                    name: format!("geo_{entity}_u{u}"),
                    kind: TokenKind::HashPair {
                        table1: t,
                        table2: t + 1,
                    },
                });
                t += 2;
            }
        }
        for name in [
            "request_type",
            "re_eta_bucket",
            "distance_bucket",
            "realtime_speed_bucket",
            "historical_speed_bucket",
            "region",
        ] {
            layout.push(TokenDef {
                name: name.into(),
                kind: TokenKind::Single { table: t },
            });
            t += 1;
        }
        layout
    }

    /// Number of tokens L in the layout.
    pub fn num_tokens(&self) -> usize {
        2 + 3 * self.geo.resolutions.len() + 6
    }

    /// Number of table lookups per request (hash-pair tokens count twice).
    pub fn num_lookups(&self) -> usize {
        2 + 6 * self.geo.resolutions.len() + 6
    }

    pub fn num_request_types(&self) -> usize {
        self.request_types.len()
    }

    /// Encode one categorical feature by name; unseen values map to the
    /// reserved unknown index.
    pub fn encode_categorical(&self, name: &str, raw: u32) -> Result<u32, FeatureError> {
        self.categorical
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.vocab.encode(raw))
            .ok_or_else(|| FeatureError::UnknownFeature(name.to_string()))
    }

    /// Map a request to its token-index sequence.
    pub fn featurize(&self, raw: &RawRequest) -> Result<TokenIndexes, FeatureError> {
        raw.validate()?;
        let mut lookups = Vec::with_capacity(self.num_lookups());
        lookups.push(TableRow {
            table: 0,
            row: self.categorical[CAT_MINUTE].vocab.encode(raw.minute_of_week()),
        });
        lookups.push(TableRow {
            table: 1,
            row: self.categorical[CAT_DAY].vocab.encode(raw.day_of_week()),
        });
        let geo_set = multi_resolution_indexes(raw.origin, raw.dest, &self.geo)?;
        let mut t = 2u16;
        for triple in &geo_set.triples {
            for pair in [triple.origin, triple.destination, triple.od_pair] {
                lookups.push(TableRow {
                    table: t,
                    row: pair.bin1,
                });
                lookups.push(TableRow {
                    table: t + 1,
                    row: pair.bin2,
                });
                t += 2;
            }
        }
        let type_id = raw.request_type.index();
        lookups.push(TableRow {
            table: t,
            row: self.categorical[CAT_REQUEST_TYPE].vocab.encode(type_id),
        });
        for (i, value) in [
            (CONT_RE_ETA, raw.re_eta_s),
            (CONT_DISTANCE, raw.distance_m),
            (CONT_REALTIME, raw.realtime_speed),
            (CONT_HISTORICAL, raw.historical_speed),
        ] {
            t += 1;
            lookups.push(TableRow {
                table: t,
                row: bucketize(value, &self.continuous[i].edges),
            });
        }
        t += 1;
        lookups.push(TableRow {
            table: t,
            row: self.categorical[CAT_REGION].vocab.encode(raw.region_id),
        });
        Ok(TokenIndexes {
            lookups,
            type_id,
            re_eta_s: raw.re_eta_s,
        })
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let schema: FeatureSchema = serde_json::from_str(text)?;
        if schema.version != SCHEMA_VERSION {
            return Err(FeatureError::VersionMismatch {
                found: schema.version,
                expected: SCHEMA_VERSION,
            });
        }
        schema.geo.validate()?;
        for c in &schema.continuous {
            if c.edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(FeatureError::Validation(vec![format!(
                    "bin edges for '{}' are not strictly increasing",
                    c.name
                )]));
            }
        }
        Ok(schema)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), FeatureError> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// FNV-1a 64-bit over arbitrary bytes; used to fingerprint schema manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hex fingerprint of a schema manifest's exact byte content.
pub fn schema_hash_of_bytes(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}
