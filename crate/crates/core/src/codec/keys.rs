use std::fmt;
use std::sync::LazyLock;

use rand::RngCore;
use secp256k1::ecdsa::{RecoverableSignature, RecoveryId};
use secp256k1::{All, Message, PublicKey, Secp256k1, SecretKey};

use super::{Address, CodecError, Hash256, Signature};

pub(crate) static SECP: LazyLock<Secp256k1<All>> = LazyLock::new(Secp256k1::new);

/// A secp256k1 key pair together with its derived account address.
#[derive(Clone)]
pub struct KeyPair {
    secret: SecretKey,
    public: [u8; 33],
    address: Address,
}

impl KeyPair {
    pub fn from_secret_bytes(secret: &[u8; 32]) -> Result<Self, CodecError> {
        let secret = SecretKey::from_slice(secret).map_err(|_| CodecError::InvalidSeed)?;
        let public = PublicKey::from_secret_key(&SECP, &secret).serialize();
        Ok(KeyPair {
            secret,
            public,
            address: Address::from_public_key(&public),
        })
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn public_key(&self) -> &[u8; 33] {
        &self.public
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.secret_bytes()
    }

    /// Signs a 32-byte digest.
    ///
    /// Nonces are ground until the recovery id is 0 so verifiers recover the
    /// key in a single attempt; any low-s signature still verifies.
    pub fn sign_digest(&self, digest: &Hash256) -> Signature {
        let msg = Message::from_digest(digest.0);
        let mut sig = SECP.sign_ecdsa_recoverable(&msg, &self.secret);
        let mut counter: u64 = 0;
        while recovery_parity(&sig) != 0 && counter < 64 {
            counter += 1;
            let mut extra = [0u8; 32];
            extra[24..].copy_from_slice(&counter.to_be_bytes());
            sig = SECP.sign_ecdsa_recoverable_with_noncedata(&msg, &self.secret, &extra);
        }
        let (_, compact) = sig.serialize_compact();
        Signature(compact)
    }
}

fn recovery_parity(sig: &RecoverableSignature) -> i32 {
    sig.serialize_compact().0.to_i32()
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public
    }
}

impl Eq for KeyPair {}

/// Generates a key pair, deterministically when `seed` is given.
///
/// A seed must be a nonzero scalar below the curve order.
pub fn keygen(seed: Option<[u8; 32]>) -> Result<KeyPair, CodecError> {
    match seed {
        Some(seed) => KeyPair::from_secret_bytes(&seed),
        None => {
            let mut rng = rand::thread_rng();
            loop {
                let mut bytes = [0u8; 32];
                rng.fill_bytes(&mut bytes);
                if let Ok(pair) = KeyPair::from_secret_bytes(&bytes) {
                    return Ok(pair);
                }
            }
        }
    }
}

/// Recovers the signer address of `sig` over `digest`, trying both parities.
/// Returns true when a candidate key hashes to `expected`.
pub(crate) fn signature_matches(digest: &Hash256, sig: &Signature, expected: &Address) -> bool {
    let Ok(standard) = secp256k1::ecdsa::Signature::from_compact(&sig.0) else {
        return false;
    };
    let mut normalized = standard;
    normalized.normalize_s();
    if normalized != standard {
        return false;
    }
    let msg = Message::from_digest(digest.0);
    for parity in 0..2 {
        let Ok(id) = RecoveryId::from_i32(parity) else {
            continue;
        };
        let Ok(recoverable) = RecoverableSignature::from_compact(&sig.0, id) else {
            continue;
        };
        if let Ok(public) = SECP.recover_ecdsa(&msg, &recoverable) {
            if Address::from_public_key(&public.serialize()) == *expected {
                return true;
            }
        }
    }
    false
}
