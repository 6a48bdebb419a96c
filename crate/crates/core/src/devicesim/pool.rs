use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archspace::macs::{layerwise_block_macs, layerwise_positions, LAYERWISE_BLOCKS};
use crate::archspace::{
    sample_architectures, Architecture, CellMacroConfig, SearchSpace, LAYERWISE_CHOICES,
    LAYERWISE_POSITIONS, LAYERWISE_SKIP, NUM_CELL_OPS, NUM_EDGES,
};
use crate::rng;
use crate::stats::spearman;

use super::{DeviceError, DeviceProfile, InteractionCoeff, SyntheticDevice};

/// Hardware family a synthetic device is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// Launch-bound with wide branch overlap.
    Gpu,
    /// Nearly serial, cost follows arithmetic.
    Cpu,
    /// Serial-ish with an expensive large-kernel path.
    Mobile,
    /// Strong op-pair fusion effects.
    Accelerator,
    /// Exactly additive: no overlap, no interactions.
    Additive,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Gpu,
        Archetype::Cpu,
        Archetype::Mobile,
        Archetype::Accelerator,
        Archetype::Additive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Gpu => "gpu",
            Archetype::Cpu => "cpu",
            Archetype::Mobile => "mobile",
            Archetype::Accelerator => "accelerator",
            Archetype::Additive => "additive",
        }
    }

    pub fn default_ranges(self) -> ArchetypeRanges {
        match self {
            Archetype::Gpu => ArchetypeRanges {
                launch_ms: [0.02, 0.1],
                conv_ms_per_mmac: [0.004, 0.015],
                channel_exponent: [0.3, 0.8],
                large_kernel_factor: [0.45, 0.75],
                mem_ms_per_melem: [0.05, 0.2],
                parallelism: [0.8, 1.0],
                interaction_strength: [0.2, 0.5],
                interaction_density: 0.25,
                fixed_overhead_ms: [0.5, 2.0],
                op_jitter: 0.25,
                edge_jitter: 0.1,
                interaction_jitter: 0.2,
            },
            Archetype::Cpu => ArchetypeRanges {
                launch_ms: [0.002, 0.03],
                conv_ms_per_mmac: [0.04, 0.12],
                channel_exponent: [0.0, 0.15],
                large_kernel_factor: [0.6, 1.4],
                mem_ms_per_melem: [0.2, 3.0],
                parallelism: [0.0, 0.3],
                interaction_strength: [0.0, 0.1],
                interaction_density: 0.25,
                fixed_overhead_ms: [0.2, 1.0],
                op_jitter: 0.25,
                edge_jitter: 0.1,
                interaction_jitter: 0.2,
            },
            Archetype::Mobile => ArchetypeRanges {
                launch_ms: [0.01, 0.03],
                conv_ms_per_mmac: [0.1, 0.35],
                channel_exponent: [0.1, 0.35],
                large_kernel_factor: [1.0, 2.5],
                mem_ms_per_melem: [0.5, 6.0],
                parallelism: [0.1, 0.5],
                interaction_strength: [0.1, 0.4],
                interaction_density: 0.25,
                fixed_overhead_ms: [1.0, 5.0],
                op_jitter: 0.25,
                edge_jitter: 0.1,
                interaction_jitter: 0.2,
            },
            Archetype::Accelerator => ArchetypeRanges {
                launch_ms: [0.005, 0.02],
                conv_ms_per_mmac: [0.01, 0.05],
                channel_exponent: [-0.3, 0.3],
                large_kernel_factor: [0.6, 1.6],
                mem_ms_per_melem: [0.3, 3.0],
                parallelism: [0.3, 0.6],
                interaction_strength: [0.6, 1.0],
                interaction_density: 0.6,
                fixed_overhead_ms: [0.5, 3.0],
                op_jitter: 0.25,
                edge_jitter: 0.1,
                interaction_jitter: 0.2,
            },
            Archetype::Additive => ArchetypeRanges {
                launch_ms: [0.002, 0.01],
                conv_ms_per_mmac: [0.04, 0.12],
                channel_exponent: [0.0, 0.15],
                large_kernel_factor: [0.85, 1.15],
                mem_ms_per_melem: [0.5, 2.0],
                parallelism: [0.0, 0.0],
                interaction_strength: [0.0, 0.0],
                interaction_density: 0.0,
                fixed_overhead_ms: [0.2, 1.0],
                op_jitter: 0.25,
                edge_jitter: 0.1,
                interaction_jitter: 0.2,
            },
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| DeviceError::Config(format!("unknown archetype `{s}`")))
    }
}

/// Uniform sampling ranges `[lo, hi]` for one archetype's device parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeRanges {
    /// Per-kernel dispatch cost.
    pub launch_ms: [f64; 2],
    pub conv_ms_per_mmac: [f64; 2],
    /// Throughput gain with width: cost scales by `(channels/64)^-β`.
    pub channel_exponent: [f64; 2],
    /// Extra cost of 3×3 (cell) or depthwise (layer-wise) kernels.
    pub large_kernel_factor: [f64; 2],
    pub mem_ms_per_melem: [f64; 2],
    pub parallelism: [f64; 2],
    pub interaction_strength: [f64; 2],
    /// Fraction of op pairs with a nonzero interaction in the archetype template.
    pub interaction_density: f64,
    pub fixed_overhead_ms: [f64; 2],
    /// Half-width of the per-device log-multiplier on each op's cost.
    pub op_jitter: f64,
    /// Half-width of the per-device log-multiplier on each cell edge's cost.
    #[serde(default)]
    pub edge_jitter: f64,
    /// Half-width of the per-device relative deviation of each interaction
    /// coefficient from the archetype template.
    #[serde(default = "default_interaction_jitter")]
    pub interaction_jitter: f64,
}

fn default_interaction_jitter() -> f64 {
    0.2
}

impl ArchetypeRanges {
    fn validate(&self, name: &str) -> Result<(), DeviceError> {
        let ranges = [
            ("launch_ms", self.launch_ms),
            ("conv_ms_per_mmac", self.conv_ms_per_mmac),
            ("channel_exponent", self.channel_exponent),
            ("large_kernel_factor", self.large_kernel_factor),
            ("mem_ms_per_melem", self.mem_ms_per_melem),
            ("parallelism", self.parallelism),
            ("interaction_strength", self.interaction_strength),
            ("fixed_overhead_ms", self.fixed_overhead_ms),
        ];
        for (key, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DeviceError::Config(format!(
                    "ranges.{name}.{key}: need finite lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        let nonneg = [
            ("launch_ms", self.launch_ms[0]),
            ("conv_ms_per_mmac", self.conv_ms_per_mmac[0]),
            ("large_kernel_factor", self.large_kernel_factor[0]),
            ("mem_ms_per_melem", self.mem_ms_per_melem[0]),
            ("parallelism", self.parallelism[0]),
            ("interaction_strength", self.interaction_strength[0]),
        ];
        for (key, lo) in nonneg {
            if lo < 0.0 {
                return Err(DeviceError::Config(format!(
                    "ranges.{name}.{key} must be >= 0"
                )));
            }
        }
        if self.parallelism[1] > 1.0 {
            return Err(DeviceError::Config(format!(
                "ranges.{name}.parallelism must be <= 1"
            )));
        }
        if self.fixed_overhead_ms[0] <= 0.0 {
            return Err(DeviceError::Config(format!(
                "ranges.{name}.fixed_overhead_ms must be > 0"
            )));
        }
        if !(0.0..=1.0).contains(&self.interaction_density) {
            return Err(DeviceError::Config(format!(
                "ranges.{name}.interaction_density must lie in [0, 1]"
            )));
        }
        for (key, v) in [
            ("op_jitter", self.op_jitter),
            ("edge_jitter", self.edge_jitter),
            ("interaction_jitter", self.interaction_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DeviceError::Config(format!(
                    "ranges.{name}.{key} must be >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    MetaTrain,
    MetaTestUnseenDevice,
    MetaTestUnseenPlatform,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::MetaTrain => "meta_train",
            Split::MetaTestUnseenDevice => "meta_test_unseen_device",
            Split::MetaTestUnseenPlatform => "meta_test_unseen_platform",
        })
    }
}

/// Generator settings, usually read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub space: SearchSpace,
    /// Device `i` is drawn from `archetypes[i % len]`.
    pub archetypes: Vec<Archetype>,
    /// Trailing devices held out as unseen devices of known platforms; at
    /// least one device always stays in the meta-train split.
    pub test_devices: usize,
    /// Every device of these archetypes goes to the unseen-platform split.
    pub unseen_platform_archetypes: Vec<Archetype>,
    pub noise_cv: f64,
    pub probe_size: usize,
    /// Accepted pairwise Spearman range on the probe set.
    pub band: [f64; 2],
    pub max_retries: usize,
    /// Every device copies the first one; the band check is skipped.
    pub homogeneous: bool,
    /// Overrides of the built-in archetype ranges.
    pub ranges: BTreeMap<Archetype, ArchetypeRanges>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::Cell,
            archetypes: vec![
                Archetype::Gpu,
                Archetype::Cpu,
                Archetype::Mobile,
                Archetype::Accelerator,
            ],
            test_devices: 3,
            unseen_platform_archetypes: Vec::new(),
            noise_cv: 0.02,
            probe_size: 200,
            band: [0.5, 0.98],
            max_retries: 100,
            homogeneous: false,
            ranges: BTreeMap::new(),
        }
    }
}

impl PoolConfig {
    pub fn from_toml(text: &str) -> Result<Self, DeviceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DeviceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ranges_for(&self, a: Archetype) -> ArchetypeRanges {
        self.ranges
            .get(&a)
            .cloned()
            .unwrap_or_else(|| a.default_ranges())
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.archetypes.is_empty() {
            return Err(DeviceError::Config("archetypes must not be empty".into()));
        }
        if let Some(a) = self
            .unseen_platform_archetypes
            .iter()
            .find(|a| !self.archetypes.contains(a))
        {
            return Err(DeviceError::Config(format!(
                "unseen_platform_archetypes: `{a}` is not listed in archetypes"
            )));
        }
        if !(self.noise_cv >= 0.0 && self.noise_cv.is_finite()) {
            return Err(DeviceError::Config("noise_cv must be >= 0".into()));
        }
        if self.probe_size < 2 {
            return Err(DeviceError::Config("probe_size must be >= 2".into()));
        }
        let [lo, hi] = self.band;
        if !(-1.0..=1.0).contains(&lo) || !(-1.0..=1.0).contains(&hi) || lo > hi {
            return Err(DeviceError::Config(format!(
                "band [{lo}, {hi}] is not a valid range"
            )));
        }
        for (a, r) in &self.ranges {
            r.validate(a.name())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub split: Split,
    pub profile: DeviceProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePool {
    pub space: SearchSpace,
    pub devices: Vec<PoolEntry>,
}

impl DevicePool {
    pub fn new(space: SearchSpace, devices: Vec<PoolEntry>) -> Result<Self, DeviceError> {
        let mut seen = HashSet::new();
        for e in &devices {
            if !seen.insert(e.profile.device_id.as_str()) {
                return Err(DeviceError::DuplicateDevice(e.profile.device_id.clone()));
            }
            if e.profile.space() != space {
                return Err(DeviceError::Config(format!(
                    "device `{}` serves the {} space, pool is {space}",
                    e.profile.device_id,
                    e.profile.space()
                )));
            }
        }
        Ok(Self { space, devices })
    }

    pub fn get(&self, device_id: &str) -> Option<&DeviceProfile> {
        self.devices
            .iter()
            .map(|e| &e.profile)
            .find(|p| p.device_id == device_id)
    }

    pub fn split_of(&self, device_id: &str) -> Option<Split> {
        self.devices
            .iter()
            .find(|e| e.profile.device_id == device_id)
            .map(|e| e.split)
    }

    pub fn in_split(&self, split: Split) -> Vec<&DeviceProfile> {
        self.devices
            .iter()
            .filter(|e| e.split == split)
            .map(|e| &e.profile)
            .collect()
    }

    pub fn ids_in_split(&self, split: Split) -> Vec<String> {
        self.in_split(split)
            .iter()
            .map(|p| p.device_id.clone())
            .collect()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &DeviceProfile> {
        self.devices.iter().map(|e| &e.profile)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool serialization")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, DeviceError> {
        let raw: Self = serde_json::from_str(text).map_err(|e| DeviceError::Parse {
            path: origin.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::new(raw.space, raw.devices)
    }

    pub fn save(&self, path: &Path) -> Result<(), DeviceError> {
        std::fs::write(path, self.to_json()).map_err(|source| DeviceError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        let text = std::fs::read_to_string(path).map_err(|source| DeviceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

fn uniform(r: &mut rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo..hi)
    }
}

/// Op-pair interaction shape shared by every device of an archetype, so the
/// pairs a family fuses well are consistent and therefore learnable.
fn interaction_template(
    archetype: Archetype,
    space: SearchSpace,
    density: f64,
) -> Vec<(u8, u8, f64)> {
    let mut r = rng::child_rng(0, &format!("template/{archetype}/{space}"), 0);
    let ops: Vec<u8> = match space {
        SearchSpace::Cell => (1..NUM_CELL_OPS as u8).collect(),
        SearchSpace::Layerwise => (0..LAYERWISE_CHOICES as u8).collect(),
    };
    let mut out = Vec::new();
    for &a in &ops {
        for &b in &ops {
            let hit = r.random::<f64>() < density;
            let v = r.random_range(-1.0..1.0);
            if hit {
                out.push((a, b, v));
            }
        }
    }
    out
}

fn sample_device(
    archetype: Archetype,
    ranges: &ArchetypeRanges,
    space: SearchSpace,
    noise_cv: f64,
    seed: u64,
) -> SyntheticDevice {
    let mut r = rng::rng(seed);
    let launch = uniform(&mut r, ranges.launch_ms);
    let rate = uniform(&mut r, ranges.conv_ms_per_mmac);
    let beta = uniform(&mut r, ranges.channel_exponent);
    let large = uniform(&mut r, ranges.large_kernel_factor);
    let mem = uniform(&mut r, ranges.mem_ms_per_melem);
    let parallelism = uniform(&mut r, ranges.parallelism);
    let strength = uniform(&mut r, ranges.interaction_strength);
    let fixed_overhead = uniform(&mut r, ranges.fixed_overhead_ms);
    let n_ops = match space {
        SearchSpace::Cell => NUM_CELL_OPS,
        SearchSpace::Layerwise => LAYERWISE_CHOICES,
    };
    let jitter: Vec<f64> = (0..n_ops)
        .map(|_| (ranges.op_jitter * r.random_range(-1.0..1.0)).exp())
        .collect();
    let eff = |channels: usize| (channels as f64 / 64.0).powf(-beta);

    let (op_cost_table, skeleton_ms) = match space {
        SearchSpace::Cell => {
            let cfg = CellMacroConfig::default();
            let sizes = cfg.stage_sizes();
            let mut table = vec![vec![0.0; 3]; NUM_CELL_OPS];
            for s in 0..3 {
                let c = cfg.channels[s];
                let mmac = (c * c * sizes[s] * sizes[s]) as f64 / 1e6;
                let melem = (c * sizes[s] * sizes[s]) as f64 / 1e6;
                table[1][s] = jitter[1] * (0.2 * launch + melem * mem);
                table[2][s] = jitter[2] * (launch + mmac * rate * eff(c));
                table[3][s] = jitter[3] * (launch + 9.0 * mmac * rate * eff(c) * large);
                table[4][s] = jitter[4] * (launch + 9.0 * melem * mem);
            }
            let skeleton = 4.0 * launch + cfg.skeleton_macs() as f64 / 1e6 * rate * eff(32);
            (table, skeleton)
        }
        SearchSpace::Layerwise => {
            let positions = layerwise_positions();
            let mut table = vec![vec![0.0; LAYERWISE_POSITIONS]; LAYERWISE_CHOICES];
            for (p, &(_, cout, hin, _)) in positions.iter().enumerate() {
                for c in 0..LAYERWISE_CHOICES as u8 {
                    let melem = (cout * hin * hin) as f64 / 1e6;
                    table[c as usize][p] = if c == LAYERWISE_SKIP {
                        jitter[c as usize] * (0.2 * launch + melem * mem)
                    } else {
                        let (k, e, _) = LAYERWISE_BLOCKS[c as usize];
                        let mmac = layerwise_block_macs(c, p) as f64 / 1e6;
                        let kernel = if k == 5 { large } else { 1.0 };
                        jitter[c as usize]
                            * (3.0 * launch
                                + mmac * rate * eff(cout) * kernel
                                + e as f64 * melem * mem)
                    };
                }
            }
            let stem_head =
                (9 * 3 * 16 * 112 * 112 + 7 * 7 * 352 * 1504 + 1504 * 1000) as f64 / 1e6;
            (table, 3.0 * launch + stem_head * rate)
        }
    };

    let interaction_coeffs = if strength == 0.0 {
        Vec::new()
    } else {
        interaction_template(archetype, space, ranges.interaction_density)
            .into_iter()
            .map(|(first, second, t)| InteractionCoeff {
                first,
                second,
                coeff: (strength
                    * t
                    * (1.0 + ranges.interaction_jitter * r.random_range(-1.0..1.0)))
                .max(-0.9),
            })
            .collect()
    };

    let edge_scale = match space {
        SearchSpace::Cell => (0..NUM_EDGES)
            .map(|_| (ranges.edge_jitter * r.random_range(-1.0..1.0)).exp())
            .collect(),
        SearchSpace::Layerwise => Vec::new(),
    };

    SyntheticDevice {
        archetype,
        space,
        op_cost_table,
        parallelism_factor: parallelism,
        interaction_coeffs,
        fixed_overhead,
        skeleton_ms,
        noise_cv,
        cells_per_stage: 5,
        edge_scale,
    }
}

/// Draws `n_devices` synthetic devices whose pairwise latency rank
/// correlations on a probe set all fall inside `config.band`.
///
/// Device `i` is resampled up to `max_retries` times until it agrees with
/// every earlier device; the probe set and every device stream derive from
/// `seed`.
pub fn generate_pool(
    config: &PoolConfig,
    n_devices: usize,
    seed: u64,
) -> Result<DevicePool, DeviceError> {
    config.validate()?;
    if n_devices < 2 {
        return Err(DeviceError::Config(format!(
            "n_devices must be >= 2, got {n_devices}"
        )));
    }
    let held_out = config.test_devices.min(n_devices - 1);
    let probe = sample_architectures(
        config.space,
        config
            .probe_size
            .min(config.space.size().min(usize::MAX as u128) as usize),
        rng::derive(seed, "probe", 0),
    )?;
    let probe_latencies =
        |d: &SyntheticDevice| -> Vec<f64> { probe.iter().map(|a| d.latency(a)).collect() };

    let [lo, hi] = config.band;
    let mut accepted: Vec<(SyntheticDevice, Vec<f64>)> = Vec::with_capacity(n_devices);
    for i in 0..n_devices {
        let archetype = config.archetypes[i % config.archetypes.len()];
        let ranges = config.ranges_for(archetype);
        ranges.validate(archetype.name())?;
        if config.homogeneous && i > 0 {
            accepted.push(accepted[0].clone());
            continue;
        }
        let device_seed = rng::derive(seed, "device", i as u64);
        let mut found = None;
        for attempt in 0..=config.max_retries {
            let dev = sample_device(
                archetype,
                &ranges,
                config.space,
                config.noise_cv,
                rng::derive(device_seed, "attempt", attempt as u64),
            );
            let lat = probe_latencies(&dev);
            let ok = config.homogeneous
                || accepted.iter().all(|(_, other)| {
                    spearman(&lat, other).is_ok_and(|rho| (lo..=hi).contains(&rho))
                });
            if ok {
                found = Some((dev, lat));
                break;
            }
        }
        match found {
            Some(d) => accepted.push(d),
            None => {
                return Err(DeviceError::Calibration {
                    index: i,
                    lo,
                    hi,
                    retries: config.max_retries,
                })
            }
        }
    }

    let devices = accepted
        .into_iter()
        .enumerate()
        .map(|(i, (dev, _))| {
            let split = if config.unseen_platform_archetypes.contains(&dev.archetype) {
                Split::MetaTestUnseenPlatform
            } else if i >= n_devices - held_out {
                Split::MetaTestUnseenDevice
            } else {
                Split::MetaTrain
            };
            PoolEntry {
                split,
                profile: DeviceProfile::synthetic(format!("{}-{i:02}", dev.archetype), dev),
            }
        })
        .collect();
    DevicePool::new(config.space, devices)
}

/// Pairwise Spearman correlations of noise-free latencies over `archs`.
pub fn pairwise_correlations(pool: &DevicePool, archs: &[Architecture]) -> Vec<Vec<f64>> {
    let lat: Vec<Vec<f64>> = pool
        .profiles()
        .map(|p| {
            archs
                .iter()
                .map(|a| p.true_latency(a).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    lat.iter()
        .map(|x| {
            lat.iter()
                .map(|y| spearman(x, y).unwrap_or(f64::NAN))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archetype_names_round_trip() {
        for a in Archetype::ALL {
            assert_eq!(a.name().parse::<Archetype>().unwrap(), a);
        }
        let err = "tpu".parse::<Archetype>().unwrap_err();
        assert!(err.to_string().contains("tpu"));
    }

    #[test]
    fn toml_rejects_unknown_archetype_and_keys() {
        let err = PoolConfig::from_toml("archetypes = [\"gpu\", \"quantum\"]").unwrap_err();
        assert!(err.to_string().contains("quantum"), "{err}");
        let err = PoolConfig::from_toml("colour = 3").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let cfg = PoolConfig::from_toml("noise_cv = 0.0\nprobe_size = 50").unwrap();
        assert_eq!(cfg.noise_cv, 0.0);
        assert_eq!(cfg.archetypes.len(), 4);
    }

    #[test]
    fn additive_archetype_is_additive() {
        let r = Archetype::Additive.default_ranges();
        for seed in 0..5 {
            let d = sample_device(Archetype::Additive, &r, SearchSpace::Cell, 0.0, seed);
            assert!(d.is_additive());
        }
    }

    #[test]
    fn batch_variants_share_costs() {
        let d = sample_device(
            Archetype::Gpu,
            &Archetype::Gpu.default_ranges(),
            SearchSpace::Cell,
            0.0,
            1,
        );
        let v = d.batch_variant(0.1);
        assert_eq!(v.op_cost_table, d.op_cost_table);
        assert_eq!(v.parallelism_factor, 0.1);
    }
}
