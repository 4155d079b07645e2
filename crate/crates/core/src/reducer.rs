//! The document reducer: the only code path that mutates a [`SessionDocument`].
//!
//! [`apply_change`] is a pure function of `(document, change)`. Server and
//! clients run the same reducer over the same sequenced changes, which is
//! what makes their documents converge.

use std::fmt;

use crate::document::{
    ChangeMessage, ClientId, DocAction, ExclusiveLock, Layer, LayerId, LayerPatch, SessionDocument,
    Stroke,
};
use crate::effect::ParamError;
use crate::lease::TransformLeaseTable;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Denial {
    /// Another client holds the layer's exclusive lock.
    ExclusiveLock { owner: ClientId },
    /// The layer is locked for content edits.
    Locked,
    /// Another client is currently transforming the layer.
    TransformLease { holder: ClientId },
}

impl Denial {
    pub fn code(&self) -> &'static str {
        match self {
            Denial::ExclusiveLock { .. } => "ExclusiveLock",
            Denial::Locked => "Locked",
            Denial::TransformLease { .. } => "TransformLease",
        }
    }
}

impl fmt::Display for Denial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Denial::ExclusiveLock { owner } => write!(f, "layer exclusively locked by {owner}"),
            Denial::Locked => f.write_str("layer is locked"),
            Denial::TransformLease { holder } => write!(f, "layer is being transformed by {holder}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RejectReason {
    /// The targeted layer, effect or stroke no longer exists.
    #[error("stale target: {0}")]
    StaleTarget(String),
    #[error("permission denied: {0}")]
    PermissionDenied(Denial),
    #[error("invalid value for `{0}`")]
    InvalidValue(String),
    #[error("malformed payload: missing `{0}`")]
    MalformedPayload(String),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("nothing to redo")]
    NothingToRedo,
}

impl RejectReason {
    /// Stable code used on the wire and in reports.
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::StaleTarget(_) => "StaleTarget",
            RejectReason::PermissionDenied(_) => "PermissionDenied",
            RejectReason::InvalidValue(_) => "InvalidValue",
            RejectReason::MalformedPayload(_) => "MalformedPayload",
            RejectReason::NothingToUndo => "NothingToUndo",
            RejectReason::NothingToRedo => "NothingToRedo",
        }
    }

    /// Secondary detail: the denial kind, field path or missing target.
    pub fn detail(&self) -> String {
        match self {
            RejectReason::StaleTarget(s)
            | RejectReason::InvalidValue(s)
            | RejectReason::MalformedPayload(s) => s.clone(),
            RejectReason::PermissionDenied(d) => d.code().to_owned(),
            RejectReason::NothingToUndo | RejectReason::NothingToRedo => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Permission {
    /// `notify_owner` is set when a non-owner breaks an exclusive lock.
    Allowed { notify_owner: Option<ClientId> },
    Denied(Denial),
}

impl Permission {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Permission::Allowed { .. })
    }
}

/// Lock rules, in precedence order: exclusive lock, plain lock, transform
/// lease. A missing target layer is allowed here and reported as stale by
/// the reducer.
pub fn check_permission(
    doc: &SessionDocument,
    change: &ChangeMessage,
    leases: &TransformLeaseTable,
    now: i64,
) -> Permission {
    let Some(layer) = change.action.target_layer().and_then(|id| doc.layer(id)) else {
        return Permission::Allowed { notify_owner: None };
    };
    let is_unlock = matches!(change.action, DocAction::ExclusiveUnlock { .. });
    let foreign_owner = layer.exclusive_owner().filter(|o| **o != change.client_id);

    if let Some(owner) = foreign_owner {
        if is_unlock {
            return Permission::Allowed { notify_owner: Some(owner.clone()) };
        }
        return Permission::Denied(Denial::ExclusiveLock { owner: owner.clone() });
    }
    if layer.locked && change.action.mutates_layer_content() {
        return Permission::Denied(Denial::Locked);
    }
    if change.action.is_transform_update() {
        if let Some(holder) = leases.holder(&layer.id, now) {
            if *holder != change.client_id {
                return Permission::Denied(Denial::TransformLease { holder: holder.clone() });
            }
        }
    }
    Permission::Allowed { notify_owner: None }
}

/// Outcome of a successfully applied change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainEvent {
    pub module: &'static str,
    pub action: &'static str,
    pub layer_id: Option<LayerId>,
    /// Former exclusive-lock owner to notify after a forced unlock.
    pub notify_owner: Option<ClientId>,
}

/// Applies `change` to a copy of `doc`.
pub fn apply_change(
    doc: &SessionDocument,
    change: &ChangeMessage,
) -> Result<(SessionDocument, DomainEvent), RejectReason> {
    let mut next = doc.clone();
    let event = apply_change_in_place(&mut next, change)?;
    Ok((next, event))
}

/// In-place form of [`apply_change`]. On rejection `doc` is untouched: every
/// check runs before the first write.
pub fn apply_change_in_place(
    doc: &mut SessionDocument,
    change: &ChangeMessage,
) -> Result<DomainEvent, RejectReason> {
    let (module, action) = change.action.wire_name();
    let notify_owner = match check_permission(doc, change, &TransformLeaseTable::new(), 0) {
        Permission::Denied(d) => return Err(RejectReason::PermissionDenied(d)),
        Permission::Allowed { notify_owner } => notify_owner,
    };

    let layer_id = match &change.action {
        DocAction::AddLayer { layer_id, name, asset } => {
            let id = layer_id
                .clone()
                .ok_or_else(|| RejectReason::MalformedPayload("layerId".into()))?;
            if doc.layer(&id).is_some() {
                return Err(RejectReason::InvalidValue("layerId".into()));
            }
            let mut layer = Layer::new(id.clone(), name.clone());
            layer.asset = asset.clone();
            doc.layers.push(layer);
            id
        }
        DocAction::DeleteLayer { layer_id } => {
            let idx = index_of(doc, layer_id)?;
            doc.layers.remove(idx);
            layer_id.clone()
        }
        DocAction::ReorderLayer { layer_id, to_index } => {
            let from = index_of(doc, layer_id)?;
            let to = *to_index as usize;
            if to >= doc.layers.len() {
                return Err(RejectReason::InvalidValue("toIndex".into()));
            }
            let layer = doc.layers.remove(from);
            doc.layers.insert(to, layer);
            layer_id.clone()
        }
        DocAction::UpdateLayerProperty { layer_id, patch } => {
            let layer = layer_mut(doc, layer_id)?;
            apply_patch(layer, patch)?;
            layer_id.clone()
        }
        DocAction::Lock { layer_id } => {
            layer_mut(doc, layer_id)?.locked = true;
            layer_id.clone()
        }
        DocAction::Unlock { layer_id } => {
            layer_mut(doc, layer_id)?.locked = false;
            layer_id.clone()
        }
        DocAction::ExclusiveLock { layer_id } => {
            let layer = layer_mut(doc, layer_id)?;
            if layer.exclusive_lock.is_none() {
                layer.exclusive_lock = Some(ExclusiveLock {
                    owner: change.client_id.clone(),
                    since: change.time_stamp,
                });
            }
            layer_id.clone()
        }
        DocAction::ExclusiveUnlock { layer_id } => {
            layer_mut(doc, layer_id)?.exclusive_lock = None;
            layer_id.clone()
        }
        DocAction::NewPath { layer_id, stroke_id, color, width, path } => {
            let layer_id = layer_id
                .as_ref()
                .ok_or_else(|| RejectReason::MalformedPayload("layerId".into()))?;
            let stroke_id = stroke_id
                .clone()
                .ok_or_else(|| RejectReason::MalformedPayload("strokeId".into()))?;
            if !(width.is_finite() && *width > 0.0) {
                return Err(RejectReason::InvalidValue("width".into()));
            }
            check_path(path).map_err(RejectReason::InvalidValue)?;
            let layer = layer_mut(doc, layer_id)?;
            if layer.strokes.iter().any(|s| s.stroke_id == stroke_id) {
                return Err(RejectReason::InvalidValue("strokeId".into()));
            }
            layer.strokes.push(Stroke {
                stroke_id,
                client_id: change.client_id.clone(),
                time_stamp: change.time_stamp,
                color: *color,
                width: *width,
                path: path.clone(),
                undone: false,
            });
            layer_id.clone()
        }
        DocAction::UndoPath { layer_id } => {
            undo_in_layer(layer_mut(doc, layer_id)?, &change.client_id)?;
            layer_id.clone()
        }
        DocAction::RedoPath { layer_id } => {
            redo_in_layer(layer_mut(doc, layer_id)?, &change.client_id)?;
            layer_id.clone()
        }
        DocAction::AddVca { layer_id, vca_id, effect, enabled, params } => {
            let vca_id = vca_id
                .clone()
                .ok_or_else(|| RejectReason::MalformedPayload("vcaId".into()))?;
            let params = effect.complete_params(params).map_err(param_reject)?;
            let layer = layer_mut(doc, layer_id)?;
            if layer.vca(&vca_id).is_some() {
                return Err(RejectReason::InvalidValue("vcaId".into()));
            }
            layer.pipeline.push(crate::document::VcaInstance {
                id: vca_id,
                effect: *effect,
                enabled: *enabled,
                params,
            });
            layer_id.clone()
        }
        DocAction::RemoveVca { layer_id, vca_id } => {
            let layer = layer_mut(doc, layer_id)?;
            let idx = vca_index(layer, vca_id)?;
            layer.pipeline.remove(idx);
            layer_id.clone()
        }
        DocAction::ReorderVca { layer_id, vca_id, to_index } => {
            let layer = layer_mut(doc, layer_id)?;
            let from = vca_index(layer, vca_id)?;
            let to = *to_index as usize;
            if to >= layer.pipeline.len() {
                return Err(RejectReason::InvalidValue("toIndex".into()));
            }
            let vca = layer.pipeline.remove(from);
            layer.pipeline.insert(to, vca);
            layer_id.clone()
        }
        DocAction::UpdateVcaParam { layer_id, vca_id, params } => {
            let layer = layer_mut(doc, layer_id)?;
            let idx = vca_index(layer, vca_id)?;
            let vca = &mut layer.pipeline[idx];
            for (name, value) in params {
                vca.effect.check(name, *value).map_err(param_reject)?;
            }
            vca.params.extend(params.iter().map(|(k, v)| (k.clone(), *v)));
            layer_id.clone()
        }
        DocAction::SetVcaEnabled { layer_id, vca_id, enabled } => {
            let layer = layer_mut(doc, layer_id)?;
            let idx = vca_index(layer, vca_id)?;
            layer.pipeline[idx].enabled = *enabled;
            layer_id.clone()
        }
    };

    Ok(DomainEvent { module, action, layer_id: Some(layer_id), notify_owner })
}

/// Marks `client`'s most recent live stroke on `layer_id` as undone.
pub fn undo_stroke(
    doc: &SessionDocument,
    client: &ClientId,
    layer_id: &LayerId,
) -> Result<SessionDocument, RejectReason> {
    stroke_history_change(doc, client, DocAction::UndoPath { layer_id: layer_id.clone() })
}

/// Restores `client`'s most recently undone stroke on `layer_id`.
pub fn redo_stroke(
    doc: &SessionDocument,
    client: &ClientId,
    layer_id: &LayerId,
) -> Result<SessionDocument, RejectReason> {
    stroke_history_change(doc, client, DocAction::RedoPath { layer_id: layer_id.clone() })
}

fn stroke_history_change(
    doc: &SessionDocument,
    client: &ClientId,
    action: DocAction,
) -> Result<SessionDocument, RejectReason> {
    let change = ChangeMessage { client_id: client.clone(), time_stamp: 0, action };
    apply_change(doc, &change).map(|(doc, _)| doc)
}

fn undo_in_layer(layer: &mut Layer, client: &ClientId) -> Result<(), RejectReason> {
    let stroke = layer
        .strokes
        .iter_mut()
        .rev()
        .find(|s| &s.client_id == client && !s.undone)
        .ok_or(RejectReason::NothingToUndo)?;
    stroke.undone = true;
    Ok(())
}

/// The redo stack is the run of the client's undone strokes after their last
/// live stroke; drawing a new stroke therefore discards it. The earliest of
/// that run is the one undone most recently.
fn redo_in_layer(layer: &mut Layer, client: &ClientId) -> Result<(), RejectReason> {
    let own: Vec<usize> = (0..layer.strokes.len())
        .filter(|&i| &layer.strokes[i].client_id == client)
        .collect();
    let after_live = own
        .iter()
        .rposition(|&i| !layer.strokes[i].undone)
        .map_or(0, |p| p + 1);
    let &idx = own.get(after_live).ok_or(RejectReason::NothingToRedo)?;
    layer.strokes[idx].undone = false;
    Ok(())
}

fn apply_patch(layer: &mut Layer, patch: &LayerPatch) -> Result<(), RejectReason> {
    if let Some(opacity) = patch.opacity {
        if !(0.0..=1.0).contains(&opacity) {
            return Err(RejectReason::InvalidValue("opacity".into()));
        }
    }
    if let Some(t) = &patch.transform {
        if !t.is_finite() {
            return Err(RejectReason::InvalidValue("transform".into()));
        }
    }
    if let Some(v) = patch.visible {
        layer.visible = v;
    }
    if let Some(o) = patch.opacity {
        layer.opacity = o;
    }
    if let Some(n) = &patch.name {
        layer.name.clone_from(n);
    }
    if let Some(t) = patch.transform {
        layer.transform = t.normalized();
    }
    Ok(())
}

pub(crate) fn check_path(path: &[crate::document::PathCommand]) -> Result<(), String> {
    use crate::document::PathCommand;
    if path.is_empty() {
        return Err("path".into());
    }
    if !matches!(path[0], PathCommand::MoveTo { .. }) {
        return Err("path[0]".into());
    }
    match path.iter().position(|c| !c.is_finite()) {
        Some(i) => Err(format!("path[{i}]")),
        None => Ok(()),
    }
}

fn param_reject(e: ParamError) -> RejectReason {
    RejectReason::InvalidValue(format!("params.{}", e.param()))
}

fn stale_layer(id: &LayerId) -> RejectReason {
    RejectReason::StaleTarget(format!("layer {id}"))
}

fn index_of(doc: &SessionDocument, id: &LayerId) -> Result<usize, RejectReason> {
    doc.layer_index(id).ok_or_else(|| stale_layer(id))
}

fn layer_mut<'a>(doc: &'a mut SessionDocument, id: &LayerId) -> Result<&'a mut Layer, RejectReason> {
    doc.layer_mut(id).ok_or_else(|| stale_layer(id))
}

fn vca_index(layer: &Layer, id: &crate::document::VcaId) -> Result<usize, RejectReason> {
    layer
        .pipeline
        .iter()
        .position(|v| &v.id == id)
        .ok_or_else(|| RejectReason::StaleTarget(format!("vca {id}")))
}
