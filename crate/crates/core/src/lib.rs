//! Virtual-organization membership and authorization toolkit.
//!
//! The crate covers both sides of the trust relationship between a VO and
//! the sites that serve it:
//!
//! - **VO side** — a membership registry ([`registry`]) holding a DAG of
//!   groups with time-scheduled membership, role, and capability grants; an
//!   attribute authority ([`authority`]) that answers signed requests with
//!   signed attribute assertions; and administration service surfaces
//!   ([`admin`]) including grid-mapfile generation ([`gridmap`]).
//! - **User side** — credential and proxy handling ([`credential`]) and the
//!   proxy tooling ([`proxy`], [`client`]) that collects assertions from one
//!   or more VOs and embeds them in a short-lived proxy under a non-critical
//!   extension.
//! - **Site side** — a pluggable authorization chain ([`enforcement`]),
//!   local credential mapping with pool-account leasing ([`mapping`]), and
//!   the gatekeeper pipeline ([`gate`]) composing validation, authorization,
//!   and mapping.
//!
//! Everything signed or persisted uses one deterministic byte format
//! ([`canonical`]), so signatures, audit hashes, and golden files are stable
//! by construction.

pub mod admin;
pub mod assertion;
pub mod audit;
pub mod authority;
pub mod canonical;
pub mod client;
pub mod credential;
pub mod crypto;
pub mod enforcement;
pub mod fqan;
pub mod gate;
pub mod gridmap;
pub mod mapping;
pub mod proxy;
pub mod registry;
pub mod schedule;
pub mod store;
pub mod subject;
pub mod transport;

#[doc(hidden)]
pub mod testutil;

pub use canonical::Value;
pub use credential::{CredentialChain, IdentityCredential, ProxyCredential, RevocationList};
pub use crypto::{KeyPair, PublicKey};
pub use fqan::Fqan;
pub use registry::VoRegistry;
pub use schedule::TimeSchedule;
pub use subject::SubjectName;
