//! Geospatial encoding: latitude/longitude pairs are mapped to
//! multi-resolution geohash strings, and each string to a pair of compact
//! embedding bins via two independent MurmurHash3 instances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Geohash base32 alphabet.
pub const BASE32_ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// Default seed of the first hash instance.
pub const DEFAULT_SEED1: u32 = 0x9747_b28c;
/// Default seed of the second hash instance.
pub const DEFAULT_SEED2: u32 = 0x5bd1_e995;

/// Separator between the origin and destination geohash in the OD-pair key.
/// Not part of the base32 alphabet, so ("ab","c") and ("a","bc") hash apart.
pub const OD_SEPARATOR: u8 = b'|';

pub const MAX_RESOLUTION: u32 = 12;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("geohash resolution {0} outside [1, 12]")]
    InvalidResolution(u32),
    #[error("hash bin count {0} must be at least 2")]
    InvalidBinCount(u32),
    #[error("resolution set must not be empty")]
    EmptyResolutions,
}

/// A validated (lat, lng) pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lng: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lng: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) || lat.is_nan() {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lng) || lng.is_nan() {
            return Err(GeoError::LongitudeOutOfRange(lng));
        }
        Ok(Self { lat, lng })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lng(&self) -> f64 {
        self.lng
    }
}

/// Map latitude and longitude onto unit-interval fractions.
pub fn normalize_coordinate(p: GeoPoint) -> (f64, f64) {
    ((p.lat + 90.0) / 180.0, (p.lng + 180.0) / 360.0)
}

/// Scale a unit fraction to a 32-bit integer, saturating at 2^32 - 1 so the
/// upper boundary (lat = 90, lng = 180) stays representable.
pub fn quantize32(f: f64) -> u32 {
    debug_assert!((0.0..=1.0).contains(&f));
    let v = (f * 4_294_967_296.0).floor();
    if v >= u32::MAX as f64 {
        u32::MAX
    } else {
        v as u32
    }
}

/// Interleave two 32-bit values: bit i of `a` lands at position 2i+1 and
/// bit i of `b` at position 2i, so `a` takes the more significant slot of
/// each pair.
pub fn interleave_bits(a: u32, b: u32) -> u64 {
    spread_bits(a) << 1 | spread_bits(b)
}

/// Spread the 32 bits of `x` onto the even positions of a u64.
fn spread_bits(x: u32) -> u64 {
    let mut v = x as u64;
    v = (v | (v << 16)) & 0x0000_ffff_0000_ffff;
    v = (v | (v << 8)) & 0x00ff_00ff_00ff_00ff;
    v = (v | (v << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    v = (v | (v << 2)) & 0x3333_3333_3333_3333;
    v = (v | (v << 1)) & 0x5555_5555_5555_5555;
    v
}

/// A geohash cell identifier of a fixed resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GeohashString {
    chars: String,
}

impl GeohashString {
    pub fn as_str(&self) -> &str {
        &self.chars
    }

    pub fn resolution(&self) -> u32 {
        self.chars.len() as u32
    }
}

impl std::fmt::Display for GeohashString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.chars)
    }
}

/// Encode a point as a geohash of `resolution` characters: interleave the
/// quantized coordinates and read the top 5·u bits MSB-first in 5-bit groups
/// through the base32 alphabet.
pub fn encode_geohash(p: GeoPoint, resolution: u32) -> Result<GeohashString, GeoError> {
    if resolution == 0 || resolution > MAX_RESOLUTION {
        return Err(GeoError::InvalidResolution(resolution));
    }
    let (f_lat, f_lng) = normalize_coordinate(p);
    let z = interleave_bits(quantize32(f_lat), quantize32(f_lng));
    let mut chars = String::with_capacity(resolution as usize);
    for k in 0..resolution {
        let group = (z >> (64 - 5 * (k + 1))) & 0x1f;
        chars.push(BASE32_ALPHABET[group as usize] as char);
    }
    Ok(GeohashString { chars })
}

/// MurmurHash3 x86 32-bit.
pub fn murmur3_32(key: &[u8], seed: u32) -> u32 {
    const C1: u32 = 0xcc9e_2d51;
    const C2: u32 = 0x1b87_3593;
    let mut h = seed;
    let mut chunks = key.chunks_exact(4);
    for block in &mut chunks {
        let mut k = u32::from_le_bytes(block.try_into().unwrap());
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
        h = h.rotate_left(13).wrapping_mul(5).wrapping_add(0xe654_6b64);
    }
    let tail = chunks.remainder();
    if !tail.is_empty() {
        let mut k: u32 = 0;
        if tail.len() >= 3 {
            k ^= (tail[2] as u32) << 16;
        }
        if tail.len() >= 2 {
            k ^= (tail[1] as u32) << 8;
        }
        k ^= tail[0] as u32;
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
    }
    h ^= key.len() as u32;
    h ^= h >> 16;
    h = h.wrapping_mul(0x85eb_ca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2_ae35);
    h ^= h >> 16;
    h
}

/// Two independent hash bins for one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashBinPair {
    pub bin1: u32,
    pub bin2: u32,
    pub num_bins: u32,
}

/// Seeds and bin counts of the geospatial hashing stage. Frozen in the
/// schema manifest so featurization is reproducible bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoHashConfig {
    pub resolutions: Vec<u32>,
    pub point_bins: u32,
    pub pair_bins: u32,
    pub seed1: u32,
    pub seed2: u32,
}

impl Default for GeoHashConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![4, 5, 6, 7],
            point_bins: 1 << 16,
            pair_bins: 1 << 18,
            seed1: DEFAULT_SEED1,
            seed2: DEFAULT_SEED2,
        }
    }
}

impl GeoHashConfig {
    pub fn validate(&self) -> Result<(), GeoError> {
        if self.resolutions.is_empty() {
            return Err(GeoError::EmptyResolutions);
        }
        for &u in &self.resolutions {
            if u == 0 || u > MAX_RESOLUTION {
                return Err(GeoError::InvalidResolution(u));
            }
        }
        if self.point_bins < 2 {
            return Err(GeoError::InvalidBinCount(self.point_bins));
        }
        if self.pair_bins < 2 {
            return Err(GeoError::InvalidBinCount(self.pair_bins));
        }
        Ok(())
    }
}

/// Hash a key into two independent bins.
pub fn hash_pair(key: &[u8], num_bins: u32, seed1: u32, seed2: u32) -> Result<HashBinPair, GeoError> {
    if num_bins < 2 {
        return Err(GeoError::InvalidBinCount(num_bins));
    }
    Ok(HashBinPair {
        bin1: murmur3_32(key, seed1) % num_bins,
        bin2: murmur3_32(key, seed2) % num_bins,
        num_bins,
    })
}

/// Hash bins for origin, destination, and the OD pair at one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoIndexTriple {
    pub resolution: u32,
    pub origin: HashBinPair,
    pub destination: HashBinPair,
    pub od_pair: HashBinPair,
}

/// One triple per configured resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeoIndexSet {
    pub triples: Vec<GeoIndexTriple>,
}

/// Map one (origin, destination) pair to hash bin pairs at one resolution.
/// The OD key joins the two geohash strings with [`OD_SEPARATOR`].
pub fn geo_feature_indexes(
    origin: GeoPoint,
    dest: GeoPoint,
    resolution: u32,
    point_bins: u32,
    pair_bins: u32,
    seed1: u32,
    seed2: u32,
) -> Result<GeoIndexTriple, GeoError> {
    let g_o = encode_geohash(origin, resolution)?;
    let g_d = encode_geohash(dest, resolution)?;
    let mut od_key = Vec::with_capacity(g_o.as_str().len() + g_d.as_str().len() + 1);
    od_key.extend_from_slice(g_o.as_str().as_bytes());
    od_key.push(OD_SEPARATOR);
    od_key.extend_from_slice(g_d.as_str().as_bytes());
    Ok(GeoIndexTriple {
        resolution,
        origin: hash_pair(g_o.as_str().as_bytes(), point_bins, seed1, seed2)?,
        destination: hash_pair(g_d.as_str().as_bytes(), point_bins, seed1, seed2)?,
        od_pair: hash_pair(&od_key, pair_bins, seed1, seed2)?,
    })
}

/// Apply [`geo_feature_indexes`] at every configured resolution.
pub fn multi_resolution_indexes(
    origin: GeoPoint,
    dest: GeoPoint,
    config: &GeoHashConfig,
) -> Result<GeoIndexSet, GeoError> {
    config.validate()?;
    let triples = config
        .resolutions
        .iter()
        .map(|&u| {
            geo_feature_indexes(
                origin,
                dest,
                u,
                config.point_bins,
                config.pair_bins,
                config.seed1,
                config.seed2,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GeoIndexSet { triples })
}
