//! Prime-order subgroups of `Z_p^*`.
//!
//! The base OT needs two generators `g` and `h` of the order-`q` subgroup
//! such that nobody knows `log_g h`. `g` comes with the parameter set; `h`
//! is always derived by hashing into the group, so it can be recomputed by
//! both parties and chosen by neither.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PRESET_RFC3526_2048: &str = "rfc3526-2048";
pub const PRESET_TEST_23: &str = "test-23";
pub const PRESET_TEST_47: &str = "test-47";

const H2G_TAG: &[u8] = b"WOT-H2G";
const PAD_TAG: &[u8] = b"WOT-PAD";

const RFC3526_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1",
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD",
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245",
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D",
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F",
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D",
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9",
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510",
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("unknown group preset {0:?}")]
    UnknownPreset(String),
    #[error("modulus is not prime")]
    ModulusNotPrime,
    #[error("subgroup order is not prime")]
    OrderNotPrime,
    #[error("subgroup order does not divide p - 1")]
    OrderDoesNotDivide,
    #[error("trivial generator")]
    TrivialGenerator,
    #[error("generator out of range")]
    GeneratorOutOfRange,
    #[error("generator does not have the stated order")]
    WrongGeneratorOrder,
    #[error("value is not a member of the subgroup")]
    NotMember,
    #[error("element encoding has length {got}, expected {expected}")]
    BadEncodingLength { got: usize, expected: usize },
}

/// An element of the order-`q` subgroup. Only constructible through
/// [`GroupParams`], which checks membership.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GroupElement(BigUint);

impl GroupElement {
    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.bits() <= 64 {
            write!(f, "GroupElement({})", self.0)
        } else {
            write!(f, "GroupElement({} bits)", self.0.bits())
        }
    }
}

/// Secret exponent in `[0, q)`.
#[derive(Clone, PartialEq, Eq)]
pub struct Exponent(BigUint);

impl Exponent {
    pub fn from_u64(v: u64) -> Self {
        Exponent(BigUint::from(v))
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

impl fmt::Debug for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Exponent(..)")
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct GroupParams {
    id: String,
    p: BigUint,
    q: BigUint,
    g: BigUint,
    h: BigUint,
    h_inv: BigUint,
    width: usize,
    small: Option<u64>,
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("id", &self.id)
            .field("p_bits", &self.p.bits())
            .field("q_bits", &self.q.bits())
            .finish()
    }
}

/// Names of the built-in parameter sets.
pub fn preset_names() -> &'static [&'static str] {
    &[PRESET_RFC3526_2048, PRESET_TEST_23, PRESET_TEST_47]
}

/// Build a named parameter set. Presets are fixed constants and skip the
/// primality checks that [`GroupParams::custom`] runs.
pub fn setup_params(preset: &str) -> Result<GroupParams, GroupError> {
    match preset {
        PRESET_RFC3526_2048 => {
            let p = BigUint::parse_bytes(RFC3526_2048_HEX.as_bytes(), 16).expect("constant");
            let q = (&p - 1u32) >> 1;
            // 2 generates the full group of order 2q; its square has order q.
            Ok(GroupParams::assemble(preset, p, q, BigUint::from(4u32)))
        }
        PRESET_TEST_23 => GroupParams::custom(preset, 23u32.into(), 11u32.into(), 2u32.into()),
        PRESET_TEST_47 => GroupParams::custom(preset, 47u32.into(), 23u32.into(), 2u32.into()),
        other => Err(GroupError::UnknownPreset(other.to_string())),
    }
}

impl GroupParams {
    /// Validate explicit parameters. `h` is derived from `id`.
    pub fn custom(id: &str, p: BigUint, q: BigUint, g: BigUint) -> Result<Self, GroupError> {
        if !is_probable_prime(&p) {
            return Err(GroupError::ModulusNotPrime);
        }
        if !is_probable_prime(&q) {
            return Err(GroupError::OrderNotPrime);
        }
        if !((&p - 1u32) % &q).is_zero() {
            return Err(GroupError::OrderDoesNotDivide);
        }
        if g.is_one() {
            return Err(GroupError::TrivialGenerator);
        }
        if g.is_zero() || g >= p {
            return Err(GroupError::GeneratorOutOfRange);
        }
        if !g.modpow(&q, &p).is_one() {
            return Err(GroupError::WrongGeneratorOrder);
        }
        Ok(Self::assemble(id, p, q, g))
    }

    fn assemble(id: &str, p: BigUint, q: BigUint, g: BigUint) -> Self {
        let width = (p.bits() as usize).div_ceil(8);
        let small = p.to_u64().filter(|&m| m < 1 << 32);
        let h = derive_h_raw(id, &p, &q);
        let h_inv = h.modpow(&(&q - 1u32), &p);
        GroupParams {
            id: id.to_string(),
            p,
            q,
            g,
            h,
            h_inv,
            width,
            small,
        }
    }

    /// Replace `h` with a caller-chosen element. The caller then knows (or
    /// may know) `log_g h`, which voids sender privacy; only for worked
    /// examples and tests.
    #[doc(hidden)]
    pub fn with_known_h(mut self, h: u64) -> Result<Self, GroupError> {
        let h = BigUint::from(h);
        if !self.is_member(&h) || h.is_one() {
            return Err(GroupError::NotMember);
        }
        self.h_inv = h.modpow(&(&self.q - 1u32), &self.p);
        self.h = h;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    pub fn order(&self) -> &BigUint {
        &self.q
    }

    /// Bytes per encoded element.
    pub fn element_width(&self) -> usize {
        self.width
    }

    pub fn g(&self) -> GroupElement {
        GroupElement(self.g.clone())
    }

    pub fn h(&self) -> GroupElement {
        GroupElement(self.h.clone())
    }

    pub fn h_inverse(&self) -> GroupElement {
        GroupElement(self.h_inv.clone())
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(BigUint::one())
    }

    pub fn is_member(&self, x: &BigUint) -> bool {
        !x.is_zero() && x < &self.p && self.modpow(x, &self.q).is_one()
    }

    pub fn element(&self, x: BigUint) -> Result<GroupElement, GroupError> {
        if self.is_member(&x) {
            Ok(GroupElement(x))
        } else {
            Err(GroupError::NotMember)
        }
    }

    /// Wrap a value without the membership check, for fault injection.
    #[doc(hidden)]
    pub fn element_unchecked(&self, x: BigUint) -> GroupElement {
        GroupElement(x)
    }

    pub fn element_from_u64(&self, x: u64) -> Result<GroupElement, GroupError> {
        self.element(BigUint::from(x))
    }

    /// Fixed-width big-endian encoding.
    pub fn encode(&self, el: &GroupElement) -> Vec<u8> {
        let raw = el.0.to_bytes_be();
        let mut out = vec![0u8; self.width - raw.len()];
        out.extend_from_slice(&raw);
        out
    }

    /// Inverse of [`encode`](Self::encode); rejects non-members.
    pub fn decode(&self, bytes: &[u8]) -> Result<GroupElement, GroupError> {
        if bytes.len() != self.width {
            return Err(GroupError::BadEncodingLength {
                got: bytes.len(),
                expected: self.width,
            });
        }
        self.element(BigUint::from_bytes_be(bytes))
    }

    fn modpow(&self, base: &BigUint, exp: &BigUint) -> BigUint {
        match (self.small, base.to_u64(), exp.to_u64()) {
            (Some(m), Some(b), Some(e)) => BigUint::from(modpow_u64(b, e, m)),
            _ => base.modpow(exp, &self.p),
        }
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        match (self.small, a.0.to_u64(), b.0.to_u64()) {
            (Some(m), Some(x), Some(y)) => GroupElement(BigUint::from(x % m * (y % m) % m)),
            _ => GroupElement((&a.0 * &b.0) % &self.p),
        }
    }

    pub fn pow(&self, base: &GroupElement, exp: &Exponent) -> GroupElement {
        GroupElement(self.modpow(&base.0, &exp.0))
    }

    pub fn pow_g(&self, exp: &Exponent) -> GroupElement {
        GroupElement(self.modpow(&self.g, &exp.0))
    }

    pub fn pow_h_u64(&self, exp: u64) -> GroupElement {
        let e = BigUint::from(exp) % &self.q;
        GroupElement(self.modpow(&self.h, &e))
    }

    pub fn exponent(&self, v: u64) -> Exponent {
        Exponent(BigUint::from(v) % &self.q)
    }

    /// Uniform exponent in `[0, q)` by rejection sampling.
    pub fn random_exponent<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Exponent {
        let bits = self.q.bits() as usize;
        let len = bits.div_ceil(8);
        let excess = len * 8 - bits;
        let mut buf = vec![0u8; len];
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= 0xFFu8 >> excess;
            let candidate = BigUint::from_bytes_be(&buf);
            if candidate < self.q {
                return Exponent(candidate);
            }
        }
    }
}

fn h2g_candidate(id: &str, p: &BigUint, counter: u32) -> BigUint {
    // 128 bits of oversampling before the reduction mod p.
    let want = (p.bits() as usize + 128).div_ceil(8);
    let mut bytes = Vec::with_capacity(want + 32);
    let mut block: u32 = 0;
    while bytes.len() < want {
        let mut hasher = Sha256::new();
        hasher.update(H2G_TAG);
        hasher.update(id.as_bytes());
        hasher.update(counter.to_be_bytes());
        hasher.update(block.to_be_bytes());
        bytes.extend_from_slice(&hasher.finalize());
        block += 1;
    }
    bytes.truncate(want);
    BigUint::from_bytes_be(&bytes) % p
}

fn derive_h_raw(id: &str, p: &BigUint, q: &BigUint) -> BigUint {
    let cofactor = (p - 1u32) / q;
    let mut counter = 0u32;
    loop {
        let h = h2g_candidate(id, p, counter).modpow(&cofactor, p);
        if !h.is_zero() && !h.is_one() {
            return h;
        }
        counter += 1;
    }
}

/// Recompute the hash-derived second generator for `params`.
pub fn derive_h(params: &GroupParams) -> GroupElement {
    GroupElement(derive_h_raw(&params.id, &params.p, &params.q))
}

pub fn is_member(params: &GroupParams, x: &BigUint) -> bool {
    params.is_member(x)
}

/// `SHA-256("WOT-PAD" ‖ binding ‖ enc(element) ‖ counter)` for
/// counter = 0, 1, …, concatenated and truncated to `out_len`.
pub fn kdf_pad(params: &GroupParams, element: &GroupElement, binding: &[u8], out_len: usize) -> Vec<u8> {
    let encoded = params.encode(element);
    let mut out = Vec::with_capacity(out_len + 32);
    let mut counter: u32 = 0;
    while out.len() < out_len {
        let mut hasher = Sha256::new();
        hasher.update(PAD_TAG);
        hasher.update(binding);
        hasher.update(&encoded);
        hasher.update(counter.to_be_bytes());
        out.extend_from_slice(&hasher.finalize());
        counter += 1;
    }
    out.truncate(out_len);
    out
}

const SMALL_PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Miller-Rabin with the first twelve prime bases; deterministic below
/// 3.3·10^24 and probabilistic (error < 4^-12) above.
pub fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'bases: for &a in &SMALL_PRIMES {
        let mut x = BigUint::from(a).modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// Square-and-multiply for moduli below 2^32.
fn modpow_u64(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % m;
        }
        base = base * base % m;
        exp >>= 1;
    }
    acc
}
