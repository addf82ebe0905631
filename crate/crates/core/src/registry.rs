//! The per-VO membership registry.
//!
//! A VO is a DAG of groups with a single root (the VO itself). Users hold
//! time-scheduled membership, role, and capability grants scoped to groups.
//! Membership in a group implies membership in every ancestor group up to
//! the root; roles and capabilities apply only to their exact scope.
//!
//! Administration can be delegated per group; a delegation covers the group
//! and everything below it. Every mutation is recorded in a hash-chained
//! [`AuditLog`](crate::audit::AuditLog) before it becomes visible, and the
//! log alone is enough to rebuild the registry state (see
//! [`VoRegistry::replay`]).
//!
//! Each VO lives in its own registry value (and its own files on disk), so
//! queries about one VO never touch another's data.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::audit::{AuditLog, AuditRecord};
use crate::canonical::{DocError, Value};
use crate::fqan::{is_valid_segment, Fqan};
use crate::schedule::TimeSchedule;
use crate::subject::SubjectName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("actor is not authorized for the target scope")]
    NotAuthorized,
    #[error("operation would make the group graph cyclic")]
    CycleWouldForm,
    #[error("a sibling with that name already exists")]
    DuplicateName,
    #[error("unknown group scope")]
    UnknownScope,
    #[error("a group needs at least one parent")]
    EmptyParents,
    #[error("unknown membership request")]
    UnknownRequest,
    #[error("request was already decided")]
    AlreadyDecided,
    #[error("no matching grant")]
    NoSuchGrant,
    #[error("invalid name `{0}`: must match [A-Za-z0-9._-]+")]
    BadName(String),
    #[error("malformed registry document: {0}")]
    Malformed(#[from] DocError),
}

/// A vertex of the VO group DAG.
///
/// `forced` marks groups whose membership FQAN is always included in issued
/// assertions, which is how sites get to see negative permissions even when
/// users present a subset of their attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupNode {
    pub id: GroupId,
    pub name: String,
    pub parents: BTreeSet<GroupId>,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrantKind {
    Membership,
    Role(String),
    Capability(String),
}

impl GrantKind {
    pub fn to_doc(&self) -> Value {
        match self {
            GrantKind::Membership => Value::map().field_str("type", "membership").build(),
            GrantKind::Role(name) => Value::map()
                .field_str("type", "role")
                .field_str("name", name)
                .build(),
            GrantKind::Capability(text) => Value::map()
                .field_str("type", "capability")
                .field_str("text", text)
                .build(),
        }
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        match doc.get_str("type")? {
            "membership" => Ok(GrantKind::Membership),
            "role" => Ok(GrantKind::Role(doc.get_str("name")?.to_string())),
            "capability" => Ok(GrantKind::Capability(doc.get_str("text")?.to_string())),
            other => Err(DocError::OutOfRange {
                field: "type".into(),
                detail: format!("unknown grant kind `{other}`"),
            }),
        }
    }
}

/// A scoped, scheduled entitlement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub user: SubjectName,
    pub scope: GroupId,
    pub kind: GrantKind,
    pub schedule: TimeSchedule,
}

impl Grant {
    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_str("user", self.user.render())
            .field_u64("scope", self.scope.0)
            .field("kind", self.kind.to_doc())
            .field("schedule", self.schedule.to_doc())
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        Ok(Grant {
            user: SubjectName::parse(doc.get_str("user")?).map_err(|e| DocError::OutOfRange {
                field: "user".into(),
                detail: e.to_string(),
            })?,
            scope: GroupId(doc.get_u64("scope")?),
            kind: GrantKind::from_doc(doc.get_map("kind")?)?,
            schedule: TimeSchedule::from_doc(doc.get_map("schedule")?)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestState {
    Pending,
    Approved,
    Rejected,
}

impl RequestState {
    fn name(self) -> &'static str {
        match self {
            RequestState::Pending => "pending",
            RequestState::Approved => "approved",
            RequestState::Rejected => "rejected",
        }
    }
}

/// A pending or decided application for membership in a set of groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipRequest {
    pub id: u64,
    pub candidate: SubjectName,
    pub requested_scopes: Vec<GroupId>,
    pub state: RequestState,
    pub decided_by: Option<SubjectName>,
    pub created_at: i64,
    pub decided_at: Option<i64>,
}

/// Delegated administration of a group subtree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdminDelegation {
    pub admin: SubjectName,
    pub scope: GroupId,
}

/// The registry for one VO.
#[derive(Debug, Clone)]
pub struct VoRegistry {
    vo: String,
    owner: SubjectName,
    groups: BTreeMap<GroupId, GroupNode>,
    root: GroupId,
    grants: Vec<Grant>,
    delegations: Vec<AdminDelegation>,
    requests: BTreeMap<u64, MembershipRequest>,
    audit: AuditLog,
    next_group_id: u64,
    next_request_id: u64,
}

impl VoRegistry {
    pub fn new(vo: &str, owner: SubjectName) -> Result<Self, RegistryError> {
        if !is_valid_segment(vo) {
            return Err(RegistryError::BadName(vo.to_string()));
        }
        let root = GroupId(0);
        let mut groups = BTreeMap::new();
        groups.insert(
            root,
            GroupNode {
                id: root,
                name: vo.to_string(),
                parents: BTreeSet::new(),
                forced: false,
            },
        );
        Ok(VoRegistry {
            vo: vo.to_string(),
            owner,
            groups,
            root,
            grants: Vec::new(),
            delegations: Vec::new(),
            requests: BTreeMap::new(),
            audit: AuditLog::new(),
            next_group_id: 1,
            next_request_id: 0,
        })
    }

    pub fn vo(&self) -> &str {
        &self.vo
    }

    pub fn owner(&self) -> &SubjectName {
        &self.owner
    }

    pub fn root(&self) -> GroupId {
        self.root
    }

    pub fn group(&self, id: GroupId) -> Option<&GroupNode> {
        self.groups.get(&id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &GroupNode> {
        self.groups.values()
    }

    pub fn grants(&self) -> &[Grant] {
        &self.grants
    }

    pub fn delegations(&self) -> &[AdminDelegation] {
        &self.delegations
    }

    pub fn requests(&self) -> impl Iterator<Item = &MembershipRequest> {
        self.requests.values()
    }

    pub fn request(&self, id: u64) -> Option<&MembershipRequest> {
        self.requests.get(&id)
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    /// Resolve a group-path FQAN (no role/capability) to its node.
    pub fn resolve_group(&self, fqan: &Fqan) -> Option<GroupId> {
        if fqan.vo() != self.vo {
            return None;
        }
        let mut current = self.root;
        for segment in fqan.groups() {
            current = self
                .groups
                .values()
                .find(|g| g.parents.contains(&current) && g.name == *segment)?
                .id;
        }
        Some(current)
    }

    // ---- administration ----

    /// True iff `actor` may administer `scope`: the VO owner everywhere, or
    /// a delegation held on the scope or any of its ancestors.
    pub fn authorize_admin(&self, actor: &SubjectName, scope: GroupId) -> bool {
        if *actor == self.owner {
            return true;
        }
        let covered = self.ancestors_or_self(scope);
        self.delegations
            .iter()
            .any(|d| d.admin == *actor && covered.contains(&d.scope))
    }

    pub fn create_group(
        &mut self,
        actor: &SubjectName,
        parents: &BTreeSet<GroupId>,
        name: &str,
        forced: bool,
        now: i64,
    ) -> Result<GroupId, RegistryError> {
        if parents.is_empty() {
            return Err(RegistryError::EmptyParents);
        }
        if !is_valid_segment(name) {
            return Err(RegistryError::BadName(name.to_string()));
        }
        for parent in parents {
            if !self.groups.contains_key(parent) {
                return Err(RegistryError::UnknownScope);
            }
            if !self.authorize_admin(actor, *parent) {
                return Err(RegistryError::NotAuthorized);
            }
            if self.child_named(*parent, name).is_some() {
                return Err(RegistryError::DuplicateName);
            }
        }

        let id = GroupId(self.next_group_id);
        self.audit.append(
            now,
            actor.clone(),
            "create_group",
            Value::map()
                .field_u64("id", id.0)
                .field_str("name", name)
                .field(
                    "parents",
                    Value::Array(parents.iter().map(|p| Value::Int(p.0 as i64)).collect()),
                )
                .field_bool("forced", forced)
                .build(),
        );
        self.next_group_id += 1;
        self.groups.insert(
            id,
            GroupNode {
                id,
                name: name.to_string(),
                parents: parents.clone(),
                forced,
            },
        );
        debug_assert!(self.is_acyclic());
        Ok(id)
    }

    /// Add a parent edge to an existing group. Rejected when the new parent
    /// sits at or below the group (that would close a cycle), or when the
    /// parent already has a child of the same name.
    pub fn add_group_parent(
        &mut self,
        actor: &SubjectName,
        group: GroupId,
        new_parent: GroupId,
        now: i64,
    ) -> Result<(), RegistryError> {
        let node = self
            .groups
            .get(&group)
            .ok_or(RegistryError::UnknownScope)?
            .clone();
        if !self.groups.contains_key(&new_parent) || group == self.root {
            return Err(RegistryError::UnknownScope);
        }
        if !self.authorize_admin(actor, new_parent) || !self.authorize_admin(actor, group) {
            return Err(RegistryError::NotAuthorized);
        }
        if self.ancestors_or_self(new_parent).contains(&group) {
            return Err(RegistryError::CycleWouldForm);
        }
        if node.parents.contains(&new_parent) {
            return Ok(()); // already an edge
        }
        if self.child_named(new_parent, &node.name).is_some() {
            return Err(RegistryError::DuplicateName);
        }

        self.audit.append(
            now,
            actor.clone(),
            "add_parent",
            Value::map()
                .field_u64("group", group.0)
                .field_u64("parent", new_parent.0)
                .build(),
        );
        self.groups
            .get_mut(&group)
            .expect("checked")
            .parents
            .insert(new_parent);
        debug_assert!(self.is_acyclic());
        Ok(())
    }

    pub fn delegate(
        &mut self,
        actor: &SubjectName,
        admin: SubjectName,
        scope: GroupId,
        now: i64,
    ) -> Result<(), RegistryError> {
        if !self.groups.contains_key(&scope) {
            return Err(RegistryError::UnknownScope);
        }
        if !self.authorize_admin(actor, scope) {
            return Err(RegistryError::NotAuthorized);
        }
        self.audit.append(
            now,
            actor.clone(),
            "delegate",
            Value::map()
                .field_str("admin", admin.render())
                .field_u64("scope", scope.0)
                .build(),
        );
        let delegation = AdminDelegation { admin, scope };
        if !self.delegations.contains(&delegation) {
            self.delegations.push(delegation);
        }
        Ok(())
    }

    pub fn grant(
        &mut self,
        actor: &SubjectName,
        grant: Grant,
        now: i64,
    ) -> Result<(), RegistryError> {
        if !self.groups.contains_key(&grant.scope) {
            return Err(RegistryError::UnknownScope);
        }
        if !self.authorize_admin(actor, grant.scope) {
            return Err(RegistryError::NotAuthorized);
        }
        self.audit
            .append(now, actor.clone(), "grant", grant.to_doc());
        self.grants.push(grant);
        Ok(())
    }

    pub fn revoke_grant(
        &mut self,
        actor: &SubjectName,
        user: &SubjectName,
        scope: GroupId,
        kind: &GrantKind,
        now: i64,
    ) -> Result<(), RegistryError> {
        if !self.groups.contains_key(&scope) {
            return Err(RegistryError::UnknownScope);
        }
        if !self.authorize_admin(actor, scope) {
            return Err(RegistryError::NotAuthorized);
        }
        if !self
            .grants
            .iter()
            .any(|g| g.user == *user && g.scope == scope && g.kind == *kind)
        {
            return Err(RegistryError::NoSuchGrant);
        }
        self.audit.append(
            now,
            actor.clone(),
            "revoke_grant",
            Value::map()
                .field_str("user", user.render())
                .field_u64("scope", scope.0)
                .field("kind", kind.to_doc())
                .build(),
        );
        self.grants
            .retain(|g| !(g.user == *user && g.scope == scope && g.kind == *kind));
        Ok(())
    }

    // ---- membership requests ----

    pub fn submit_request(
        &mut self,
        candidate: &SubjectName,
        requested_scopes: Vec<GroupId>,
        now: i64,
    ) -> Result<u64, RegistryError> {
        if requested_scopes.is_empty()
            || requested_scopes
                .iter()
                .any(|s| !self.groups.contains_key(s))
        {
            return Err(RegistryError::UnknownScope);
        }
        let id = self.next_request_id;
        self.audit.append(
            now,
            candidate.clone(),
            "submit_request",
            Value::map()
                .field_u64("id", id)
                .field(
                    "scopes",
                    Value::Array(
                        requested_scopes
                            .iter()
                            .map(|s| Value::Int(s.0 as i64))
                            .collect(),
                    ),
                )
                .build(),
        );
        self.next_request_id += 1;
        self.requests.insert(
            id,
            MembershipRequest {
                id,
                candidate: candidate.clone(),
                requested_scopes,
                state: RequestState::Pending,
                decided_by: None,
                created_at: now,
                decided_at: None,
            },
        );
        Ok(id)
    }

    /// Decide a pending request. Approval atomically creates always-active
    /// membership grants for every requested scope.
    pub fn decide_request(
        &mut self,
        actor: &SubjectName,
        id: u64,
        approve: bool,
        now: i64,
    ) -> Result<MembershipRequest, RegistryError> {
        let request = self
            .requests
            .get(&id)
            .ok_or(RegistryError::UnknownRequest)?
            .clone();
        if request.state != RequestState::Pending {
            return Err(RegistryError::AlreadyDecided);
        }
        for scope in &request.requested_scopes {
            if !self.authorize_admin(actor, *scope) {
                return Err(RegistryError::NotAuthorized);
            }
        }
        self.audit.append(
            now,
            actor.clone(),
            "decide_request",
            Value::map()
                .field_u64("id", id)
                .field_bool("approve", approve)
                .build(),
        );
        self.apply_decision(id, approve, actor.clone(), now);
        Ok(self.requests[&id].clone())
    }

    fn apply_decision(&mut self, id: u64, approve: bool, decided_by: SubjectName, now: i64) {
        let request = self.requests.get_mut(&id).expect("checked");
        request.state = if approve {
            RequestState::Approved
        } else {
            RequestState::Rejected
        };
        request.decided_by = Some(decided_by);
        request.decided_at = Some(now);
        if approve {
            let candidate = request.candidate.clone();
            let scopes = request.requested_scopes.clone();
            for scope in scopes {
                self.grants.push(Grant {
                    user: candidate.clone(),
                    scope,
                    kind: GrantKind::Membership,
                    schedule: TimeSchedule::Always,
                });
            }
        }
    }

    // ---- queries ----

    /// Reflexive ancestor closure over all parent edges.
    pub fn ancestors_or_self(&self, start: GroupId) -> BTreeSet<GroupId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(node) = self.groups.get(&id) {
                queue.extend(node.parents.iter().copied());
            }
        }
        seen
    }

    /// Groups the user is a member of at `t`: the reflexive ancestor closure
    /// of every group with an active membership grant.
    pub fn member_groups(&self, user: &SubjectName, t: i64) -> BTreeSet<GroupId> {
        let mut members = BTreeSet::new();
        for scope in self.active_membership_scopes(user, t) {
            members.extend(self.ancestors_or_self(scope));
        }
        members
    }

    fn active_membership_scopes(&self, user: &SubjectName, t: i64) -> BTreeSet<GroupId> {
        self.grants
            .iter()
            .filter(|g| {
                g.user == *user && g.kind == GrantKind::Membership && g.schedule.is_active_at(t)
            })
            .map(|g| g.scope)
            .collect()
    }

    /// Everything the user holds at instant `t`, sorted by rendered FQAN.
    ///
    /// Membership closes upward over the DAG; roles and capabilities are
    /// emitted only for their exact scope and only while a membership grant
    /// on that scope or an ancestor of it is active. Unknown users get an
    /// empty list.
    pub fn effective_attributes(&self, user: &SubjectName, t: i64) -> Vec<Fqan> {
        let mut paths = PathCache::default();
        let mut out: BTreeSet<Fqan> = BTreeSet::new();

        let membership_scopes = self.active_membership_scopes(user, t);
        for id in self.member_groups(user, t) {
            out.insert(paths.fqan(self, id));
        }
        for grant in &self.grants {
            if grant.user != *user || !grant.schedule.is_active_at(t) {
                continue;
            }
            let qualified = match &grant.kind {
                GrantKind::Membership => continue,
                GrantKind::Role(name) => paths.fqan(self, grant.scope).with_role(name.clone()),
                GrantKind::Capability(text) => {
                    paths.fqan(self, grant.scope).with_capability(text.clone())
                }
            };
            let backed_by_membership = self
                .ancestors_or_self(grant.scope)
                .intersection(&membership_scopes)
                .next()
                .is_some();
            if backed_by_membership {
                if let Ok(f) = qualified {
                    out.insert(f);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Membership FQANs of the forced groups the user belongs to at `t`.
    pub fn forced_membership_fqans(&self, user: &SubjectName, t: i64) -> Vec<Fqan> {
        let mut paths = PathCache::default();
        self.member_groups(user, t)
            .into_iter()
            .filter(|id| self.groups[id].forced)
            .map(|id| paths.fqan(self, id))
            .collect()
    }

    /// Canonical FQAN of a group: the lexicographically smallest root path.
    pub fn group_fqan(&self, id: GroupId) -> Option<Fqan> {
        if !self.groups.contains_key(&id) {
            return None;
        }
        Some(PathCache::default().fqan(self, id))
    }

    /// Distinct subjects holding any grant, sorted by rendered name.
    pub fn users(&self) -> Vec<SubjectName> {
        let mut users: Vec<SubjectName> = self
            .grants
            .iter()
            .map(|g| g.user.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        users.sort_by_key(|s| s.render());
        users
    }

    /// Subjects whose effective attributes include `fqan` at `t`, sorted by
    /// rendered name.
    pub fn userlist(&self, fqan: &Fqan, t: i64) -> Vec<SubjectName> {
        self.users()
            .into_iter()
            .filter(|u| self.effective_attributes(u, t).contains(fqan))
            .collect()
    }

    fn child_named(&self, parent: GroupId, name: &str) -> Option<GroupId> {
        self.groups
            .values()
            .find(|g| g.parents.contains(&parent) && g.name == name)
            .map(|g| g.id)
    }

    fn is_acyclic(&self) -> bool {
        // Kahn's algorithm over parent edges.
        let mut out_degree: BTreeMap<GroupId, usize> =
            self.groups.keys().map(|id| (*id, 0)).collect();
        let mut children: BTreeMap<GroupId, Vec<GroupId>> = BTreeMap::new();
        for node in self.groups.values() {
            *out_degree.get_mut(&node.id).expect("present") = node.parents.len();
            for p in &node.parents {
                children.entry(*p).or_default().push(node.id);
            }
        }
        let mut queue: VecDeque<GroupId> = out_degree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut visited = 0usize;
        while let Some(id) = queue.pop_front() {
            visited += 1;
            for child in children.get(&id).into_iter().flatten() {
                let d = out_degree.get_mut(child).expect("present");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(*child);
                }
            }
        }
        visited == self.groups.len()
    }

    // ---- audit integration ----

    pub fn verify_audit_chain(&self) -> bool {
        self.audit.verify()
    }

    /// Rebuild a registry from its audit log alone.
    pub fn replay(
        vo: &str,
        owner: SubjectName,
        records: &[AuditRecord],
    ) -> Result<VoRegistry, RegistryError> {
        let mut registry = VoRegistry::new(vo, owner)?;
        for record in records {
            registry.apply_record(record)?;
        }
        registry.audit = AuditLog::from_records(records.to_vec());
        Ok(registry)
    }

    fn apply_record(&mut self, record: &AuditRecord) -> Result<(), RegistryError> {
        let payload = &record.payload;
        match record.action.as_str() {
            "create_group" => {
                let id = GroupId(payload.get_u64("id")?);
                let mut parents = BTreeSet::new();
                for p in payload.get_array("parents")? {
                    match p {
                        Value::Int(n) if *n >= 0 => parents.insert(GroupId(*n as u64)),
                        _ => return Err(RegistryError::UnknownScope),
                    };
                }
                self.groups.insert(
                    id,
                    GroupNode {
                        id,
                        name: payload.get_str("name")?.to_string(),
                        parents,
                        forced: payload.get_bool("forced")?,
                    },
                );
                self.next_group_id = self.next_group_id.max(id.0 + 1);
            }
            "add_parent" => {
                let group = GroupId(payload.get_u64("group")?);
                let parent = GroupId(payload.get_u64("parent")?);
                self.groups
                    .get_mut(&group)
                    .ok_or(RegistryError::UnknownScope)?
                    .parents
                    .insert(parent);
            }
            "delegate" => {
                let admin = SubjectName::parse(payload.get_str("admin")?)
                    .map_err(|_| RegistryError::NotAuthorized)?;
                let scope = GroupId(payload.get_u64("scope")?);
                let delegation = AdminDelegation { admin, scope };
                if !self.delegations.contains(&delegation) {
                    self.delegations.push(delegation);
                }
            }
            "grant" => self.grants.push(Grant::from_doc(payload)?),
            "revoke_grant" => {
                let user = SubjectName::parse(payload.get_str("user")?)
                    .map_err(|_| RegistryError::NoSuchGrant)?;
                let scope = GroupId(payload.get_u64("scope")?);
                let kind = GrantKind::from_doc(payload.get_map("kind")?)?;
                self.grants
                    .retain(|g| !(g.user == user && g.scope == scope && g.kind == kind));
            }
            "submit_request" => {
                let id = payload.get_u64("id")?;
                let mut scopes = Vec::new();
                for s in payload.get_array("scopes")? {
                    match s {
                        Value::Int(n) if *n >= 0 => scopes.push(GroupId(*n as u64)),
                        _ => return Err(RegistryError::UnknownScope),
                    }
                }
                self.requests.insert(
                    id,
                    MembershipRequest {
                        id,
                        candidate: record.actor.clone(),
                        requested_scopes: scopes,
                        state: RequestState::Pending,
                        decided_by: None,
                        created_at: record.timestamp,
                        decided_at: None,
                    },
                );
                self.next_request_id = self.next_request_id.max(id + 1);
            }
            "decide_request" => {
                let id = payload.get_u64("id")?;
                let approve = payload.get_bool("approve")?;
                if !self.requests.contains_key(&id) {
                    return Err(RegistryError::UnknownRequest);
                }
                self.apply_decision(id, approve, record.actor.clone(), record.timestamp);
            }
            _ => {
                return Err(RegistryError::Malformed(DocError::OutOfRange {
                    field: "action".into(),
                    detail: format!("unknown audit action `{}`", record.action),
                }))
            }
        }
        Ok(())
    }

    // ---- persistence ----

    pub fn snapshot_doc(&self) -> Value {
        let groups = self
            .groups
            .values()
            .map(|g| {
                Value::map()
                    .field_u64("id", g.id.0)
                    .field_str("name", &g.name)
                    .field(
                        "parents",
                        Value::Array(g.parents.iter().map(|p| Value::Int(p.0 as i64)).collect()),
                    )
                    .field_bool("forced", g.forced)
                    .build()
            })
            .collect();
        let requests = self
            .requests
            .values()
            .map(|r| {
                Value::map()
                    .field_u64("id", r.id)
                    .field_str("candidate", r.candidate.render())
                    .field(
                        "scopes",
                        Value::Array(
                            r.requested_scopes
                                .iter()
                                .map(|s| Value::Int(s.0 as i64))
                                .collect(),
                        ),
                    )
                    .field_str("state", r.state.name())
                    .field_opt(
                        "decided_by",
                        r.decided_by.as_ref().map(|s| Value::str(s.render())),
                    )
                    .field_int("created_at", r.created_at)
                    .field_opt("decided_at", r.decided_at.map(Value::Int))
                    .build()
            })
            .collect();
        Value::map()
            .field_str("format", "vo-registry")
            .field_str("hash", AuditLog::digest_name())
            .field_str("vo", &self.vo)
            .field_str("owner", self.owner.render())
            .field_u64("next_group_id", self.next_group_id)
            .field_u64("next_request_id", self.next_request_id)
            .field("groups", Value::Array(groups))
            .field(
                "grants",
                Value::Array(self.grants.iter().map(Grant::to_doc).collect()),
            )
            .field(
                "delegations",
                Value::Array(
                    self.delegations
                        .iter()
                        .map(|d| {
                            Value::map()
                                .field_str("admin", d.admin.render())
                                .field_u64("scope", d.scope.0)
                                .build()
                        })
                        .collect(),
                ),
            )
            .field("requests", Value::Array(requests))
            .build()
    }

    /// Restore from a snapshot document; the audit log is stored separately
    /// and attached by the caller.
    pub fn from_snapshot_doc(doc: &Value, audit: AuditLog) -> Result<Self, RegistryError> {
        let bad = |field: &str, detail: String| {
            RegistryError::Malformed(DocError::OutOfRange {
                field: field.into(),
                detail,
            })
        };
        if doc.get_str("format")? != "vo-registry" {
            return Err(bad("format", "expected vo-registry".into()));
        }
        let owner =
            SubjectName::parse(doc.get_str("owner")?).map_err(|e| bad("owner", e.to_string()))?;
        let mut registry = VoRegistry::new(doc.get_str("vo")?, owner)?;
        registry.groups.clear();
        for g in doc.get_array("groups")? {
            let id = GroupId(g.get_u64("id")?);
            let mut parents = BTreeSet::new();
            for p in g.get_array("parents")? {
                match p {
                    Value::Int(n) if *n >= 0 => parents.insert(GroupId(*n as u64)),
                    _ => return Err(bad("parents", "ids must be non-negative".into())),
                };
            }
            registry.groups.insert(
                id,
                GroupNode {
                    id,
                    name: g.get_str("name")?.to_string(),
                    parents,
                    forced: g.get_bool("forced")?,
                },
            );
        }
        if !registry.groups.contains_key(&registry.root) {
            return Err(bad("groups", "snapshot lacks the root group".into()));
        }
        for g in doc.get_array("grants")? {
            registry.grants.push(Grant::from_doc(g)?);
        }
        for d in doc.get_array("delegations")? {
            registry.delegations.push(AdminDelegation {
                admin: SubjectName::parse(d.get_str("admin")?)
                    .map_err(|e| bad("admin", e.to_string()))?,
                scope: GroupId(d.get_u64("scope")?),
            });
        }
        for r in doc.get_array("requests")? {
            let state = match r.get_str("state")? {
                "pending" => RequestState::Pending,
                "approved" => RequestState::Approved,
                "rejected" => RequestState::Rejected,
                other => return Err(bad("state", format!("unknown state `{other}`"))),
            };
            let mut scopes = Vec::new();
            for s in r.get_array("scopes")? {
                match s {
                    Value::Int(n) if *n >= 0 => scopes.push(GroupId(*n as u64)),
                    _ => return Err(bad("scopes", "ids must be non-negative".into())),
                }
            }
            let id = r.get_u64("id")?;
            registry.requests.insert(
                id,
                MembershipRequest {
                    id,
                    candidate: SubjectName::parse(r.get_str("candidate")?)
                        .map_err(|e| bad("candidate", e.to_string()))?,
                    requested_scopes: scopes,
                    state,
                    decided_by: match r.get_opt("decided_by") {
                        Some(v) => Some(
                            SubjectName::parse(v.str_value()?)
                                .map_err(|e| bad("decided_by", e.to_string()))?,
                        ),
                        None => None,
                    },
                    created_at: r.get_int("created_at")?,
                    decided_at: match r.get_opt("decided_at") {
                        Some(Value::Int(n)) => Some(*n),
                        None => None,
                        _ => return Err(bad("decided_at", "expected integer".into())),
                    },
                },
            );
        }
        registry.next_group_id = doc.get_u64("next_group_id")?;
        registry.next_request_id = doc.get_u64("next_request_id")?;
        registry.audit = audit;
        if !registry.is_acyclic() {
            return Err(RegistryError::CycleWouldForm);
        }
        Ok(registry)
    }
}

/// Memoized lexicographically-smallest root paths for group nodes.
#[derive(Default)]
struct PathCache {
    paths: HashMap<GroupId, String>,
}

impl PathCache {
    fn path(&mut self, registry: &VoRegistry, id: GroupId) -> String {
        if let Some(p) = self.paths.get(&id) {
            return p.clone();
        }
        let node = &registry.groups[&id];
        let path = if node.parents.is_empty() {
            format!("/{}", node.name)
        } else {
            node.parents
                .iter()
                .map(|p| format!("{}/{}", self.path(registry, *p), node.name))
                .min()
                .expect("non-empty parents")
        };
        self.paths.insert(id, path.clone());
        path
    }

    fn fqan(&mut self, registry: &VoRegistry, id: GroupId) -> Fqan {
        Fqan::parse(&self.path(registry, id)).expect("group paths are valid FQANs")
    }
}
