//! Transform leases: short-lived implicit locks on a layer's transform.

use std::collections::BTreeMap;

use crate::document::{ClientId, LayerId};

/// Lease lifetime; any selection or transform update by the holder renews it.
pub const LEASE_TTL_MS: i64 = 30_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lease {
    pub holder: ClientId,
    pub expires_at: i64,
}

/// At most one lease per layer; expired leases count as absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransformLeaseTable {
    leases: BTreeMap<LayerId, Lease>,
}

impl TransformLeaseTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current holder of `layer`'s lease at time `now`.
    pub fn holder(&self, layer: &LayerId, now: i64) -> Option<&ClientId> {
        self.leases
            .get(layer)
            .filter(|l| l.expires_at > now)
            .map(|l| &l.holder)
    }

    /// Grants or renews the lease unless another client holds a live one.
    pub fn acquire(&mut self, layer: &LayerId, client: &ClientId, now: i64) -> bool {
        match self.holder(layer, now) {
            Some(h) if h != client => false,
            _ => {
                let lease = Lease { holder: client.clone(), expires_at: now + LEASE_TTL_MS };
                self.leases.insert(layer.clone(), lease);
                true
            }
        }
    }

    /// Renews the lease only if `client` already holds it.
    pub fn refresh(&mut self, layer: &LayerId, client: &ClientId, now: i64) -> bool {
        match self.leases.get_mut(layer) {
            Some(l) if &l.holder == client && l.expires_at > now => {
                l.expires_at = now + LEASE_TTL_MS;
                true
            }
            _ => false,
        }
    }

    pub fn release(&mut self, layer: &LayerId, client: &ClientId) {
        if self.leases.get(layer).is_some_and(|l| &l.holder == client) {
            self.leases.remove(layer);
        }
    }

    /// Drops whatever lease exists on `layer`, e.g. after it was deleted.
    pub fn clear_layer(&mut self, layer: &LayerId) {
        self.leases.remove(layer);
    }

    pub fn release_client(&mut self, client: &ClientId) {
        self.leases.retain(|_, l| &l.holder != client);
    }

    /// Layers whose live lease is held by `client`.
    pub fn held_by<'a>(
        &'a self,
        client: &'a ClientId,
        now: i64,
    ) -> impl Iterator<Item = &'a LayerId> + 'a {
        self.leases
            .iter()
            .filter(move |(_, l)| &l.holder == client && l.expires_at > now)
            .map(|(k, _)| k)
    }

    pub fn purge_expired(&mut self, now: i64) {
        self.leases.retain(|_, l| l.expires_at > now);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LayerId, &Lease)> {
        self.leases.iter()
    }
}
