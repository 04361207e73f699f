//! Key choosers following the YCSB generators.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    Uniform,
    /// Zipfian popularity with the popular keys scattered by hashing.
    Zipfian,
    /// Zipfian popularity concentrated on the highest key ids.
    ZipfianLatest,
}

impl Distribution {
    pub const ALL: [Distribution; 3] = [
        Distribution::Uniform,
        Distribution::Zipfian,
        Distribution::ZipfianLatest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::Zipfian => "zipfian",
            Distribution::ZipfianLatest => "zipfian-latest",
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Distribution::Uniform),
            "zipfian" => Ok(Distribution::Zipfian),
            "zipfian-latest" | "zipfian_latest" | "latest" => Ok(Distribution::ZipfianLatest),
            other => Err(format!("unknown distribution {other:?}")),
        }
    }
}

/// Item count the scrambled generator draws from before hashing into the
/// key space, and its precomputed zeta for theta 0.99 (YCSB constants).
const SCRAMBLED_ITEMS: u64 = 10_000_000_000;
const SCRAMBLED_ZETA_099: f64 = 26.469_028_201_783_02;

pub fn zeta(n: u64, theta: f64) -> f64 {
    (1..=n).map(|i| 1.0 / (i as f64).powf(theta)).sum()
}

/// Gray et al.'s rejection-free Zipfian sampler over `0..items`; rank 0 is
/// the most popular.
#[derive(Debug, Clone)]
pub struct Zipf {
    items: u64,
    theta: f64,
    zetan: f64,
    alpha: f64,
    eta: f64,
    half_pow_theta: f64,
}

impl Zipf {
    pub fn new(items: u64, theta: f64) -> Self {
        Self::with_zeta(items, theta, zeta(items, theta))
    }

    pub fn with_zeta(items: u64, theta: f64, zetan: f64) -> Self {
        let zeta2 = zeta(2, theta);
        Self {
            items,
            theta,
            zetan,
            alpha: 1.0 / (1.0 - theta),
            eta: (1.0 - (2.0 / items as f64).powf(1.0 - theta)) / (1.0 - zeta2 / zetan),
            half_pow_theta: 0.5f64.powf(theta),
        }
    }

    pub fn items(&self) -> u64 {
        self.items
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        let u: f64 = rng.gen();
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 0;
        }
        if uz < 1.0 + self.half_pow_theta {
            return 1.min(self.items - 1);
        }
        let rank = (self.items as f64 * (self.eta * u - self.eta + 1.0).powf(self.alpha)) as u64;
        rank.min(self.items - 1)
    }
}

/// 64-bit FNV-1a over the little-endian bytes of `v`, as YCSB hashes keys.
pub fn fnv1a64(mut v: u64) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for _ in 0..8 {
        hash ^= v & 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        v >>= 8;
    }
    (hash as i64).unsigned_abs()
}

#[derive(Debug, Clone)]
enum Inner {
    Uniform,
    Scrambled(Zipf),
    Latest(Zipf),
}

/// Draws key ids in `0..key_space`.
#[derive(Debug, Clone)]
pub struct KeyChooser {
    key_space: u64,
    inner: Inner,
}

impl KeyChooser {
    /// Panics if `key_space` is zero.
    pub fn new(dist: Distribution, key_space: u64, theta: f64) -> Self {
        assert!(key_space > 0, "key space must be non-empty");
        let inner = match dist {
            Distribution::Uniform => Inner::Uniform,
            Distribution::Zipfian => {
                let zetan = if theta == 0.99 {
                    SCRAMBLED_ZETA_099
                } else {
                    // Summing ten billion terms is not practical; the
                    // tail beyond the key space adds little to the skew.
                    zeta(key_space, theta)
                };
                let items = if theta == 0.99 {
                    SCRAMBLED_ITEMS
                } else {
                    key_space
                };
                Inner::Scrambled(Zipf::with_zeta(items, theta, zetan))
            }
            Distribution::ZipfianLatest => Inner::Latest(Zipf::new(key_space, theta)),
        };
        Self { key_space, inner }
    }

    pub fn key_space(&self) -> u64 {
        self.key_space
    }

    pub fn next(&self, rng: &mut impl Rng) -> u64 {
        match &self.inner {
            Inner::Uniform => rng.gen_range(0..self.key_space),
            Inner::Scrambled(z) => fnv1a64(z.sample(rng)) % self.key_space,
            Inner::Latest(z) => self.key_space - 1 - z.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_round_trip() {
        for d in Distribution::ALL {
            assert_eq!(d.as_str().parse::<Distribution>().unwrap(), d);
        }
        assert!("pareto".parse::<Distribution>().is_err());
    }

    fn fnv_bytes(bytes: &[u8]) -> u64 {
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(*b)).wrapping_mul(0x100_0000_01b3)
        })
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(fnv_bytes(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv_bytes(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv_bytes(b"foobar"), 0x8594_4171_f739_67e8);
        for v in [0u64, 1, 255, 1 << 40, u64::MAX] {
            let full = fnv_bytes(&v.to_le_bytes());
            assert_eq!(fnv1a64(v), (full as i64).unsigned_abs());
        }
    }

    #[test]
    fn precomputed_zeta_is_plausible() {
        // zeta(n, s) ~ n^(1-s)/(1-s) + zeta(s); at 1e10 and 0.99 this is
        // about 26.5. Check the partial sum at 1e6 sits well below.
        let partial = zeta(1_000_000, 0.99);
        assert!(partial < SCRAMBLED_ZETA_099 && partial > 10.0);
    }

    #[test]
    fn draws_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in Distribution::ALL {
            for space in [1u64, 2, 3, 1000] {
                let k = KeyChooser::new(d, space, 0.99);
                for _ in 0..2000 {
                    assert!(k.next(&mut rng) < space);
                }
            }
        }
    }

    #[test]
    fn zipf_rank_frequencies_follow_power_law() {
        let n = 1000;
        let z = Zipf::new(n, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 400_000;
        let mut counts = vec![0u64; n as usize];
        for _ in 0..draws {
            counts[z.sample(&mut rng) as usize] += 1;
        }
        let zn = zeta(n, 0.99);
        for rank in [0usize, 1, 9] {
            let expected = draws as f64 / ((rank + 1) as f64).powf(0.99) / zn;
            let got = counts[rank] as f64;
            assert!(
                (got - expected).abs() < 0.05 * expected,
                "rank {rank}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn latest_concentrates_on_high_keys() {
        let k = KeyChooser::new(Distribution::ZipfianLatest, 100_000, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let top = (0..10_000).filter(|_| k.next(&mut rng) >= 99_900).count();
        assert!(top > 3_000, "{top}");
    }

    #[test]
    fn scrambled_spreads_popular_keys() {
        let k = KeyChooser::new(Distribution::Zipfian, 100_000, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let top = (0..10_000).filter(|_| k.next(&mut rng) >= 99_900).count();
        assert!(top < 300, "{top}");
    }
}
