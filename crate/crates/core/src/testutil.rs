//! Shared fixtures for tests and benchmarks: a throwaway authority and the
//! users it signs.

use crate::credential::{
    create_authority, issue_identity, Credential, CredentialChain, IdentityCredential,
};
use crate::crypto::KeyPair;
use crate::subject::SubjectName;

/// A fixed "current time" for deterministic fixtures: 2003-06-01T00:00:00Z.
pub const FIXED_NOW: i64 = 1_054_425_600;

pub fn subject(name: &str) -> SubjectName {
    SubjectName::from_pairs([("O", "test"), ("CN", name)]).unwrap()
}

pub struct TestUser {
    pub credential: IdentityCredential,
    pub key: KeyPair,
    pub chain: CredentialChain,
}

/// One certificate authority and a clock.
pub struct World {
    pub now: i64,
    pub ca_credential: IdentityCredential,
    pub ca_key: KeyPair,
}

impl World {
    pub fn new() -> World {
        let now = FIXED_NOW;
        let mut ca_key = KeyPair::generate().unwrap();
        let ca_credential = create_authority(
            SubjectName::from_pairs([("O", "test"), ("CN", "root ca")]).unwrap(),
            &mut ca_key,
            now - 86_400,
            now + 10 * 365 * 86_400,
        )
        .unwrap();
        World {
            now,
            ca_credential,
            ca_key,
        }
    }

    pub fn anchors(&self) -> Vec<IdentityCredential> {
        vec![self.ca_credential.clone()]
    }

    pub fn user(&mut self, name: &str) -> TestUser {
        let now = self.now;
        self.user_with_window(name, now - 3600, now + 365 * 86_400)
    }

    pub fn user_with_window(&mut self, name: &str, not_before: i64, not_after: i64) -> TestUser {
        let key = KeyPair::generate().unwrap();
        let credential = issue_identity(
            &self.ca_credential.clone(),
            &mut self.ca_key,
            subject(name),
            key.public().clone(),
            not_before,
            not_after,
            false,
        )
        .unwrap();
        let chain = CredentialChain::new(vec![
            Credential::Identity(credential.clone()),
            Credential::Identity(self.ca_credential.clone()),
        ]);
        TestUser {
            credential,
            key,
            chain,
        }
    }
}

impl Default for World {
    fn default() -> Self {
        World::new()
    }
}
