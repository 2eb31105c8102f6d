//! Biosignal records, emotion-label codec, synthetic generation, and
//! per-subject/channel normalization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Rating threshold: a rating strictly greater than this sets the axis bit.
pub const RATING_MIDPOINT: f64 = 4.5;

/// One time sample of channel readings, tagged by subject/video/sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub subject: u32,
    pub video: u32,
    pub sample: u32,
    pub channels: Vec<f64>,
}

/// Self-assessed valence/arousal/dominance, each on the 1..9 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    valence: f64,
    arousal: f64,
    dominance: f64,
}

impl RatingTriple {
    pub fn new(valence: f64, arousal: f64, dominance: f64) -> Result<Self, DatasetError> {
        for (axis, value) in [
            ("valence", valence),
            ("arousal", arousal),
            ("dominance", dominance),
        ] {
            if !(1.0..=9.0).contains(&value) {
                return Err(DatasetError::RatingOutOfRange { axis, value });
            }
        }
        Ok(RatingTriple {
            valence,
            arousal,
            dominance,
        })
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }

    pub fn dominance(&self) -> f64 {
        self.dominance
    }
}

/// One of the 8 emotion classes; bijective with (valence, arousal,
/// dominance) threshold bits via `id = 4v + 2a + d + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(u8);

impl ClassId {
    pub fn new(id: u8) -> Result<Self, DatasetError> {
        if (1..=8).contains(&id) {
            Ok(ClassId(id))
        } else {
            Err(DatasetError::ClassOutOfRange { id })
        }
    }

    /// Builds the class from threshold bits; valence is most significant.
    pub fn from_bits(valence: bool, arousal: bool, dominance: bool) -> Self {
        ClassId(4 * u8::from(valence) + 2 * u8::from(arousal) + u8::from(dominance) + 1)
    }

    pub fn get(&self) -> u8 {
        self.0
    }

    /// 0-based index, handy for array-backed counts.
    pub fn index(&self) -> usize {
        usize::from(self.0) - 1
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Thresholds each rating at the midpoint (strictly greater sets the bit)
/// and packs the bits into a class id.
pub fn encode_label(rating: &RatingTriple) -> ClassId {
    ClassId::from_bits(
        rating.valence > RATING_MIDPOINT,
        rating.arousal > RATING_MIDPOINT,
        rating.dominance > RATING_MIDPOINT,
    )
}

/// Inverse of the class-id formula: returns (valence, arousal, dominance)
/// threshold bits.
pub fn decode_label(class: ClassId) -> (bool, bool, bool) {
    let bits = class.get() - 1;
    (bits & 4 != 0, bits & 2 != 0, bits & 1 != 0)
}

/// Parameters of the synthetic DEAP-shaped generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub subjects: u32,
    pub videos: u32,
    pub samples_per_video: u32,
    pub channels: usize,
    /// Spacing of the class-specific mean vectors.
    pub class_separation: f64,
    /// Per-channel Gaussian noise around the class mean.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.subjects < 1 || self.videos < 1 || self.samples_per_video < 1 {
            return Err(DatasetError::InvalidConfig(
                "subjects, videos and samples_per_video must all be >= 1".into(),
            ));
        }
        if self.channels < 1 {
            return Err(DatasetError::InvalidConfig("channels must be >= 1".into()));
        }
        let sigma_valid = self.noise_sigma.is_finite() && self.noise_sigma > 0.0;
        if !sigma_valid {
            return Err(DatasetError::InvalidConfig(
                "noise_sigma must be positive and finite".into(),
            ));
        }
        if self.class_separation < 0.0 || !self.class_separation.is_finite() {
            return Err(DatasetError::InvalidConfig(
                "class_separation must be nonnegative and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Ratings keyed by (subject, video).
pub type RatingsTable = BTreeMap<(u32, u32), RatingTriple>;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),

    #[error("{axis} rating {value} outside [1, 9]")]
    RatingOutOfRange { axis: &'static str, value: f64 },

    #[error("class id {id} outside 1..8")]
    ClassOutOfRange { id: u8 },

    #[error("degenerate channel: (subject {subject}, channel {channel}) is constant or has fewer than 2 samples")]
    DegenerateChannel { subject: u32, channel: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: record (subject {subject}, video {video}) has no rating row")]
    MissingRating {
        path: PathBuf,
        line: u64,
        subject: u32,
        video: u32,
    },

    #[error("{path}:{line}: duplicate record (subject {subject}, video {video}, sample {sample})")]
    DuplicateRecord {
        path: PathBuf,
        line: u64,
        subject: u32,
        video: u32,
        sample: u32,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ground truth attached to generated data: the class each (subject, video)
/// was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<RawRecord>,
    pub ratings: RatingsTable,
    pub true_classes: BTreeMap<(u32, u32), ClassId>,
}

/// Per-class mean for one channel. Channels cycle through the three rating
/// axes, so classes sit on the vertices of a scaled cube and the label
/// structure is recoverable from the signal.
fn class_mean(class: ClassId, channel: usize, separation: f64) -> f64 {
    let (v, a, d) = decode_label(class);
    let bit = match channel % 3 {
        0 => v,
        1 => a,
        _ => d,
    };
    if bit {
        separation
    } else {
        0.0
    }
}

/// Draws a full synthetic dataset: each (subject, video) gets a uniform
/// ground-truth class, ratings consistent with that class, and
/// `samples_per_video` Gaussian samples around the class mean vector.
/// Deterministic given the seed.
pub fn generate_synthetic(config: &DatasetConfig) -> Result<SyntheticData, DatasetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut ratings = RatingsTable::new();
    let mut true_classes = BTreeMap::new();
    for subject in 1..=config.subjects {
        for video in 1..=config.videos {
            let class = ClassId::new(rng.gen_range(1..=8)).expect("range is 1..=8");
            let (v, a, d) = decode_label(class);
            let mut draw_axis = |bit: bool| -> f64 {
                if bit {
                    rng.gen_range(5.0..=9.0)
                } else {
                    rng.gen_range(1.0..=4.5)
                }
            };
            let rating = RatingTriple::new(draw_axis(v), draw_axis(a), draw_axis(d))
                .expect("drawn ratings are in range");
            ratings.insert((subject, video), rating);
            true_classes.insert((subject, video), class);
        }
    }

    let total = config.subjects as usize
        * config.videos as usize
        * config.samples_per_video as usize;
    let mut records = Vec::with_capacity(total);
    for subject in 1..=config.subjects {
        for video in 1..=config.videos {
            let class = true_classes[&(subject, video)];
            for sample in 0..config.samples_per_video {
                let channels = (0..config.channels)
                    .map(|ch| {
                        let noise: f64 = rng.sample(StandardNormal);
                        class_mean(class, ch, config.class_separation)
                            + noise * config.noise_sigma
                    })
                    .collect();
                records.push(RawRecord {
                    subject,
                    video,
                    sample,
                    channels,
                });
            }
        }
    }

    Ok(SyntheticData {
        records,
        ratings,
        true_classes,
    })
}

/// Rescales every (subject, channel) group to zero mean and unit sample
/// standard deviation (n-1 convention). Record identity and order are
/// preserved. Groups that are constant or smaller than 2 samples are
/// rejected: downstream metrics are undefined on zero vectors.
pub fn normalize(records: &[RawRecord]) -> Result<Vec<RawRecord>, DatasetError> {
    #[derive(Default, Clone)]
    struct Welford {
        n: u64,
        mean: f64,
        m2: f64,
    }

    impl Welford {
        fn push(&mut self, x: f64) {
            self.n += 1;
            let delta = x - self.mean;
            self.mean += delta / self.n as f64;
            self.m2 += delta * (x - self.mean);
        }
    }

    let mut stats: HashMap<(u32, usize), Welford> = HashMap::new();
    for record in records {
        for (channel, &value) in record.channels.iter().enumerate() {
            stats
                .entry((record.subject, channel))
                .or_default()
                .push(value);
        }
    }

    let mut scale: HashMap<(u32, usize), (f64, f64)> = HashMap::with_capacity(stats.len());
    for ((subject, channel), w) in stats {
        if w.n < 2 {
            return Err(DatasetError::DegenerateChannel { subject, channel });
        }
        let sd = (w.m2 / (w.n - 1) as f64).sqrt();
        if sd == 0.0 {
            return Err(DatasetError::DegenerateChannel { subject, channel });
        }
        scale.insert((subject, channel), (w.mean, sd));
    }

    Ok(records
        .iter()
        .map(|record| {
            let channels = record
                .channels
                .iter()
                .enumerate()
                .map(|(channel, &value)| {
                    let (mean, sd) = scale[&(record.subject, channel)];
                    (value - mean) / sd
                })
                .collect();
            RawRecord {
                subject: record.subject,
                video: record.video,
                sample: record.sample,
                channels,
            }
        })
        .collect())
}

/// Writes the raw-signals CSV: `subject,video,sample,ch1,...,chC`.
pub fn write_raw(path: &Path, records: &[RawRecord]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let channels = records.first().map_or(0, |r| r.channels.len());
    let header: Vec<String> = (1..=channels).map(|c| format!("ch{c}")).collect();
    writeln!(w, "subject,video,sample,{}", header.join(",")).map_err(io_err(path))?;
    for record in records {
        write!(w, "{},{},{}", record.subject, record.video, record.sample)
            .map_err(io_err(path))?;
        for value in &record.channels {
            write!(w, ",{value}").map_err(io_err(path))?;
        }
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the ratings CSV: `subject,video,valence,arousal,dominance`.
pub fn write_ratings(path: &Path, ratings: &RatingsTable) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "subject,video,valence,arousal,dominance").map_err(io_err(path))?;
    for ((subject, video), rating) in ratings {
        writeln!(
            w,
            "{subject},{video},{},{},{}",
            rating.valence(),
            rating.arousal(),
            rating.dominance()
        )
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    what: &str,
    path: &Path,
    line: u64,
) -> Result<T, DatasetError> {
    field.trim().parse().map_err(|_| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {what} from {field:?}"),
    })
}

/// Reads the ratings CSV into a table keyed by (subject, video).
pub fn load_ratings(path: &Path) -> Result<RatingsTable, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut table = RatingsTable::new();
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(io_err(path))?,
        None => {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "empty ratings file".into(),
            })
        }
    };
    if header.trim() != "subject,video,valence,arousal,dominance" {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected ratings header {header:?}"),
        });
    }

    for (idx, line) in lines {
        let line_no = idx as u64 + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let subject: u32 = parse_field(fields[0], "subject", path, line_no)?;
        let video: u32 = parse_field(fields[1], "video", path, line_no)?;
        let valence: f64 = parse_field(fields[2], "valence", path, line_no)?;
        let arousal: f64 = parse_field(fields[3], "arousal", path, line_no)?;
        let dominance: f64 = parse_field(fields[4], "dominance", path, line_no)?;
        let rating =
            RatingTriple::new(valence, arousal, dominance).map_err(|e| DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        if table.insert((subject, video), rating).is_some() {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("duplicate rating for (subject {subject}, video {video})"),
            });
        }
    }
    Ok(table)
}

/// Reads the raw-signals CSV and its ratings table, checking row shape,
/// duplicate (subject, video, sample) triples, and that every record has a
/// rating.
pub fn load_raw(
    signals_path: &Path,
    ratings_path: &Path,
) -> Result<(Vec<RawRecord>, RatingsTable), DatasetError> {
    let ratings = load_ratings(ratings_path)?;
    let records = parse_signals(signals_path, Some(&ratings))?;
    Ok((records, ratings))
}

/// Reads just the raw-signals CSV; no ratings cross-check.
pub fn load_signals(signals_path: &Path) -> Result<Vec<RawRecord>, DatasetError> {
    parse_signals(signals_path, None)
}

fn parse_signals(
    signals_path: &Path,
    ratings: Option<&RatingsTable>,
) -> Result<Vec<RawRecord>, DatasetError> {
    let file = File::open(signals_path).map_err(io_err(signals_path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(io_err(signals_path))?,
        None => {
            return Err(DatasetError::Parse {
                path: signals_path.to_path_buf(),
                line: 1,
                message: "empty signals file".into(),
            })
        }
    };
    let header_fields: Vec<&str> = header.trim().split(',').collect();
    if header_fields.len() < 4
        || header_fields[..3] != ["subject", "video", "sample"]
        || header_fields[3..]
            .iter()
            .enumerate()
            .any(|(i, f)| *f != format!("ch{}", i + 1))
    {
        return Err(DatasetError::Parse {
            path: signals_path.to_path_buf(),
            line: 1,
            message: format!("unexpected signals header {header:?}"),
        });
    }
    let channels = header_fields.len() - 3;

    let mut records = Vec::new();
    let mut seen: HashSet<(u32, u32, u32)> = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx as u64 + 1;
        let line = line.map_err(io_err(signals_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + channels {
            return Err(DatasetError::Parse {
                path: signals_path.to_path_buf(),
                line: line_no,
                message: format!(
                    "expected {} channel columns, found {}",
                    channels,
                    fields.len().saturating_sub(3)
                ),
            });
        }
        let subject: u32 = parse_field(fields[0], "subject", signals_path, line_no)?;
        let video: u32 = parse_field(fields[1], "video", signals_path, line_no)?;
        let sample: u32 = parse_field(fields[2], "sample", signals_path, line_no)?;
        if !seen.insert((subject, video, sample)) {
            return Err(DatasetError::DuplicateRecord {
                path: signals_path.to_path_buf(),
                line: line_no,
                subject,
                video,
                sample,
            });
        }
        if let Some(table) = ratings {
            if !table.contains_key(&(subject, video)) {
                return Err(DatasetError::MissingRating {
                    path: signals_path.to_path_buf(),
                    line: line_no,
                    subject,
                    video,
                });
            }
        }
        let mut values = Vec::with_capacity(channels);
        for field in &fields[3..] {
            values.push(parse_field::<f64>(field, "channel value", signals_path, line_no)?);
        }
        records.push(RawRecord {
            subject,
            video,
            sample,
            channels: values,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(v: f64, a: f64, d: f64) -> RatingTriple {
        RatingTriple::new(v, a, d).unwrap()
    }

    #[test]
    fn encode_paper_anchor_classes() {
        assert_eq!(encode_label(&triple(1.0, 1.0, 1.0)).get(), 1);
        assert_eq!(encode_label(&triple(9.0, 9.0, 9.0)).get(), 8);
    }

    #[test]
    fn encode_applies_bit_formula() {
        // bits (1,0,1) -> 4 + 0 + 1 + 1
        assert_eq!(encode_label(&triple(7.0, 2.0, 8.0)).get(), 6);
    }

    #[test]
    fn midpoint_is_not_greater_than_itself() {
        assert_eq!(encode_label(&triple(4.5, 4.5, 4.5)).get(), 1);
    }

    #[test]
    fn decode_matches_anchors() {
        assert_eq!(decode_label(ClassId::new(1).unwrap()), (false, false, false));
        assert_eq!(decode_label(ClassId::new(8).unwrap()), (true, true, true));
        assert_eq!(decode_label(ClassId::new(6).unwrap()), (true, false, true));
    }

    #[test]
    fn codec_round_trips_all_classes() {
        for id in 1..=8 {
            let class = ClassId::new(id).unwrap();
            let (v, a, d) = decode_label(class);
            assert_eq!(ClassId::from_bits(v, a, d), class);
        }
    }

    proptest::proptest! {
        // raising any single rating never clears that axis's bit
        #[test]
        fn encode_is_monotone_per_axis(
            v in 1.0f64..=9.0,
            a in 1.0f64..=9.0,
            d in 1.0f64..=9.0,
            bump in 0.0f64..=8.0,
            axis in 0usize..3,
        ) {
            let base = triple(v, a, d);
            let bumped = match axis {
                0 => RatingTriple::new((v + bump).min(9.0), a, d),
                1 => RatingTriple::new(v, (a + bump).min(9.0), d),
                _ => RatingTriple::new(v, a, (d + bump).min(9.0)),
            }
            .unwrap();
            let before = decode_label(encode_label(&base));
            let after = decode_label(encode_label(&bumped));
            let pick = |bits: (bool, bool, bool)| match axis {
                0 => bits.0,
                1 => bits.1,
                _ => bits.2,
            };
            proptest::prop_assert!(pick(after) >= pick(before));
            // untouched axes keep their bits
            for other in 0..3 {
                if other != axis {
                    let pick_other = |bits: (bool, bool, bool)| match other {
                        0 => bits.0,
                        1 => bits.1,
                        _ => bits.2,
                    };
                    proptest::prop_assert_eq!(pick_other(after), pick_other(before));
                }
            }
        }
    }

    #[test]
    fn ratings_and_class_ids_are_range_checked() {
        assert!(RatingTriple::new(0.5, 5.0, 5.0).is_err());
        assert!(RatingTriple::new(5.0, 9.5, 5.0).is_err());
        assert!(ClassId::new(0).is_err());
        assert!(ClassId::new(9).is_err());
    }

    #[test]
    fn generator_emits_configured_counts() {
        let config = DatasetConfig {
            subjects: 1,
            videos: 1,
            samples_per_video: 10,
            channels: 2,
            class_separation: 1.0,
            noise_sigma: 0.5,
            seed: 7,
        };
        let data = generate_synthetic(&config).unwrap();
        assert_eq!(data.records.len(), 10);
        assert_eq!(data.ratings.len(), 1);
        assert_eq!(data.true_classes.len(), 1);
    }

    #[test]
    fn generator_is_deterministic_per_seed() {
        let config = DatasetConfig {
            subjects: 2,
            videos: 3,
            samples_per_video: 4,
            channels: 5,
            class_separation: 2.0,
            noise_sigma: 0.5,
            seed: 42,
        };
        let a = generate_synthetic(&config).unwrap();
        let b = generate_synthetic(&config).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.ratings, b.ratings);

        let other = generate_synthetic(&DatasetConfig { seed: 43, ..config }).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn generator_ratings_recover_the_drawn_class() {
        let config = DatasetConfig {
            subjects: 4,
            videos: 8,
            samples_per_video: 1,
            channels: 3,
            class_separation: 1.0,
            noise_sigma: 0.1,
            seed: 9,
        };
        let data = generate_synthetic(&config).unwrap();
        for (key, rating) in &data.ratings {
            assert_eq!(encode_label(rating), data.true_classes[key]);
        }
    }

    #[test]
    fn generator_rejects_bad_config() {
        let config = DatasetConfig {
            subjects: 0,
            videos: 1,
            samples_per_video: 1,
            channels: 1,
            class_separation: 1.0,
            noise_sigma: 0.5,
            seed: 0,
        };
        assert!(generate_synthetic(&config).is_err());
    }

    fn rec(subject: u32, video: u32, sample: u32, channels: Vec<f64>) -> RawRecord {
        RawRecord {
            subject,
            video,
            sample,
            channels,
        }
    }

    #[test]
    fn normalize_hand_checkable_example() {
        let records = vec![
            rec(1, 1, 0, vec![1.0]),
            rec(1, 1, 1, vec![2.0]),
            rec(1, 1, 2, vec![3.0]),
        ];
        let normalized = normalize(&records).unwrap();
        let values: Vec<f64> = normalized.iter().map(|r| r.channels[0]).collect();
        assert_eq!(values, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let records = vec![
            rec(1, 1, 0, vec![4.0, -2.0]),
            rec(1, 1, 1, vec![9.0, 5.5]),
            rec(1, 2, 0, vec![-3.0, 0.25]),
        ];
        let once = normalize(&records).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            for (x, y) in a.channels.iter().zip(&b.channels) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_rejects_constant_channel() {
        let records = vec![
            rec(1, 1, 0, vec![5.0]),
            rec(1, 1, 1, vec![5.0]),
            rec(1, 1, 2, vec![5.0]),
        ];
        let err = normalize(&records).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::DegenerateChannel {
                subject: 1,
                channel: 0
            }
        ));
    }

    #[test]
    fn normalize_rejects_single_sample_group() {
        let records = vec![rec(1, 1, 0, vec![5.0]), rec(2, 1, 0, vec![1.0])];
        assert!(matches!(
            normalize(&records),
            Err(DatasetError::DegenerateChannel { .. })
        ));
    }

    #[test]
    fn normalize_groups_by_subject_and_channel() {
        // subject 2's values are shifted/scaled; each group normalizes on its own
        let records = vec![
            rec(1, 1, 0, vec![1.0]),
            rec(1, 1, 1, vec![3.0]),
            rec(2, 1, 0, vec![100.0]),
            rec(2, 1, 1, vec![300.0]),
        ];
        let normalized = normalize(&records).unwrap();
        let s1: Vec<f64> = normalized[..2].iter().map(|r| r.channels[0]).collect();
        let s2: Vec<f64> = normalized[2..].iter().map(|r| r.channels[0]).collect();
        assert_eq!(s1, s2);
        // order and identity preserved
        assert_eq!(normalized[2].subject, 2);
        assert_eq!(normalized[3].sample, 1);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            subjects: 2,
            videos: 2,
            samples_per_video: 3,
            channels: 4,
            class_separation: 3.0,
            noise_sigma: 0.5,
            seed: 3,
        };
        let data = generate_synthetic(&config).unwrap();
        let signals = dir.path().join("signals.csv");
        let ratings = dir.path().join("ratings.csv");
        write_raw(&signals, &data.records).unwrap();
        write_ratings(&ratings, &data.ratings).unwrap();

        let (records, table) = load_raw(&signals, &ratings).unwrap();
        assert_eq!(records, data.records);
        assert_eq!(table, data.ratings);
    }

    #[test]
    fn load_raw_reports_wrong_column_count_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let signals = dir.path().join("signals.csv");
        let ratings = dir.path().join("ratings.csv");
        std::fs::write(
            &signals,
            "subject,video,sample,ch1,ch2\n1,1,0,0.5,0.5\n1,1,1,0.25\n",
        )
        .unwrap();
        std::fs::write(
            &ratings,
            "subject,video,valence,arousal,dominance\n1,1,5,5,5\n",
        )
        .unwrap();
        let err = load_raw(&signals, &ratings).unwrap_err();
        match err {
            DatasetError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_raw_reports_missing_rating() {
        let dir = tempfile::tempdir().unwrap();
        let signals = dir.path().join("signals.csv");
        let ratings = dir.path().join("ratings.csv");
        std::fs::write(&signals, "subject,video,sample,ch1\n1,2,0,0.5\n").unwrap();
        std::fs::write(
            &ratings,
            "subject,video,valence,arousal,dominance\n1,1,5,5,5\n",
        )
        .unwrap();
        assert!(matches!(
            load_raw(&signals, &ratings),
            Err(DatasetError::MissingRating {
                subject: 1,
                video: 2,
                ..
            })
        ));
    }

    #[test]
    fn load_raw_reports_duplicate_triple() {
        let dir = tempfile::tempdir().unwrap();
        let signals = dir.path().join("signals.csv");
        let ratings = dir.path().join("ratings.csv");
        std::fs::write(
            &signals,
            "subject,video,sample,ch1\n1,1,0,0.5\n1,1,0,0.75\n",
        )
        .unwrap();
        std::fs::write(
            &ratings,
            "subject,video,valence,arousal,dominance\n1,1,5,5,5\n",
        )
        .unwrap();
        assert!(matches!(
            load_raw(&signals, &ratings),
            Err(DatasetError::DuplicateRecord { sample: 0, .. })
        ));
    }

    #[test]
    fn load_raw_parses_wellformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let signals = dir.path().join("signals.csv");
        let ratings = dir.path().join("ratings.csv");
        std::fs::write(
            &signals,
            "subject,video,sample,ch1,ch2\n1,1,0,0.5,1\n1,1,1,-2,3.25\n1,1,2,0,0\n",
        )
        .unwrap();
        std::fs::write(
            &ratings,
            "subject,video,valence,arousal,dominance\n1,1,5,5,5\n",
        )
        .unwrap();
        let (records, _) = load_raw(&signals, &ratings).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].channels, vec![-2.0, 3.25]);
    }
}
