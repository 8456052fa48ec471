use super::{ParamType, SlotBinding, WorkflowError, WorkflowModule};
use crate::ids::AssetId;
use crate::model::{Modality, ParamValue, Params, StepSpec};

/// Parameters with defaults filled and types coerced, plus the asset bound
/// to each input slot (in slot order).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSpec {
    pub parameters: Params,
    pub bindings: Vec<SlotBinding>,
}

/// Validates a step spec against a workflow. Pure: `modality_of` resolves
/// referenced assets and nothing else is consulted.
///
/// Required slots are bound first, in declaration order, each to the first
/// unbound reference of its modality; optional slots then take leftovers.
/// Surplus references are ignored.
pub fn validate_spec(
    spec: &StepSpec,
    workflow: &WorkflowModule,
    modality_of: impl Fn(&AssetId) -> Option<Modality>,
) -> Result<NormalizedSpec, WorkflowError> {
    let mut refs = Vec::with_capacity(spec.reference_asset_ids.len());
    for id in &spec.reference_asset_ids {
        let m = modality_of(id).ok_or_else(|| WorkflowError::UnknownAsset(id.clone()))?;
        refs.push((id, m));
    }
    let mut used = vec![false; refs.len()];
    let mut bound: Vec<Option<AssetId>> = vec![None; workflow.input_slots.len()];
    for pass_required in [true, false] {
        for (i, slot) in workflow.input_slots.iter().enumerate() {
            if slot.required != pass_required {
                continue;
            }
            let hit = refs
                .iter()
                .enumerate()
                .find(|(j, (_, m))| !used[*j] && *m == slot.modality)
                .map(|(j, _)| j);
            match hit {
                Some(j) => {
                    used[j] = true;
                    bound[i] = Some(refs[j].0.clone());
                }
                None if slot.required => return Err(WorkflowError::MissingRequiredInput(slot.name.clone())),
                None => {}
            }
        }
    }
    let bindings = workflow
        .input_slots
        .iter()
        .zip(bound)
        .map(|(slot, asset_id)| SlotBinding {
            slot: slot.name.clone(),
            modality: slot.modality,
            asset_id,
        })
        .collect();

    for name in spec.parameters.keys() {
        if workflow.param(name).is_none() {
            return Err(WorkflowError::UnknownParam(name.clone()));
        }
    }
    let mut parameters = Params::new();
    for p in &workflow.parameter_schema {
        let value = match spec.parameters.get(&p.name) {
            None => default_of(&p.ty),
            Some(v) => coerce(&p.name, &p.ty, v)?,
        };
        parameters.insert(p.name.clone(), value);
    }
    Ok(NormalizedSpec { parameters, bindings })
}

fn default_of(ty: &ParamType) -> ParamValue {
    match ty {
        ParamType::Int { default, .. } => ParamValue::Int(*default),
        ParamType::Float { default, .. } => ParamValue::Float(*default),
        ParamType::Text { default } => ParamValue::Text(default.clone()),
        ParamType::Enum { default, .. } => ParamValue::Text(default.clone()),
        ParamType::Bool { default } => ParamValue::Bool(*default),
    }
}

fn coerce(name: &str, ty: &ParamType, v: &ParamValue) -> Result<ParamValue, WorkflowError> {
    let mismatch = || WorkflowError::ParamTypeMismatch(name.to_owned());
    let range = || WorkflowError::ParamOutOfRange(name.to_owned());
    match ty {
        ParamType::Int { min, max, .. } => {
            let i = match v {
                ParamValue::Int(i) => *i,
                ParamValue::Float(f) if f.fract() == 0.0 && f.is_finite() => *f as i64,
                ParamValue::Text(s) => s.trim().parse().map_err(|_| mismatch())?,
                _ => return Err(mismatch()),
            };
            if i < *min || i > *max {
                return Err(range());
            }
            Ok(ParamValue::Int(i))
        }
        ParamType::Float { min, max, .. } => {
            let f = match v {
                ParamValue::Float(f) => *f,
                ParamValue::Int(i) => *i as f64,
                ParamValue::Text(s) => s.trim().parse().map_err(|_| mismatch())?,
                _ => return Err(mismatch()),
            };
            if !f.is_finite() || f < *min || f > *max {
                return Err(range());
            }
            Ok(ParamValue::Float(f))
        }
        ParamType::Text { .. } => Ok(ParamValue::Text(v.to_string())),
        ParamType::Enum { choices, .. } => {
            let s = v.to_string();
            if choices.contains(&s) {
                Ok(ParamValue::Text(s))
            } else {
                Err(range())
            }
        }
        ParamType::Bool { .. } => match v {
            ParamValue::Bool(b) => Ok(ParamValue::Bool(*b)),
            ParamValue::Text(s) => s.trim().parse().map(ParamValue::Bool).map_err(|_| mismatch()),
            _ => Err(mismatch()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflows::Registry;

    fn img(n: u8) -> AssetId {
        AssetId::of_bytes(&[n])
    }

    fn spec(refs: Vec<AssetId>, params: &[(&str, ParamValue)]) -> StepSpec {
        StepSpec {
            reference_asset_ids: refs,
            parameters: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            ..Default::default()
        }
    }

    fn all_images(_: &AssetId) -> Option<Modality> {
        Some(Modality::Image)
    }

    #[test]
    fn empty_params_fill_defaults() {
        let r = Registry::baseline();
        let wf = r.get("wf-t2i").unwrap();
        let n = validate_spec(&spec(vec![], &[]), wf, all_images).unwrap();
        assert_eq!(n.parameters["num_candidates"], ParamValue::Int(4));
        assert_eq!(n.parameters["guidance"], ParamValue::Float(7.0));
        assert_eq!(n.parameters.len(), wf.parameter_schema.len());
        assert_eq!(n.bindings[0].asset_id, None);
    }

    #[test]
    fn missing_required_input() {
        let r = Registry::baseline();
        let err = validate_spec(&spec(vec![], &[]), r.get("wf-i2v").unwrap(), all_images).unwrap_err();
        assert_eq!(err, WorkflowError::MissingRequiredInput("anchor".into()));
    }

    #[test]
    fn out_of_range_and_unknown_params() {
        let r = Registry::baseline();
        let up = r.get("wf-upscale").unwrap();
        let s = spec(vec![img(1)], &[("factor", ParamValue::Int(16))]);
        assert_eq!(
            validate_spec(&s, up, all_images).unwrap_err(),
            WorkflowError::ParamOutOfRange("factor".into())
        );
        let s = spec(vec![img(1)], &[("tiles", ParamValue::Int(1))]);
        assert_eq!(
            validate_spec(&s, up, all_images).unwrap_err(),
            WorkflowError::UnknownParam("tiles".into())
        );
        let cam = r.get("wf-camera-move").unwrap();
        let s = spec(vec![img(1)], &[("motion", ParamValue::Text("spin".into()))]);
        assert_eq!(
            validate_spec(&s, cam, all_images).unwrap_err(),
            WorkflowError::ParamOutOfRange("motion".into())
        );
    }

    #[test]
    fn coercion() {
        let r = Registry::baseline();
        let up = r.get("wf-upscale").unwrap();
        let s = spec(vec![img(1)], &[("factor", ParamValue::Text("3".into()))]);
        assert_eq!(
            validate_spec(&s, up, all_images).unwrap().parameters["factor"],
            ParamValue::Int(3)
        );
        let s = spec(vec![img(1)], &[("factor", ParamValue::Float(4.0))]);
        assert_eq!(
            validate_spec(&s, up, all_images).unwrap().parameters["factor"],
            ParamValue::Int(4)
        );
        let t2i = r.get("wf-t2i").unwrap();
        let s = spec(vec![], &[("guidance", ParamValue::Int(9))]);
        assert_eq!(
            validate_spec(&s, t2i, all_images).unwrap().parameters["guidance"],
            ParamValue::Float(9.0)
        );
        let s = spec(vec![], &[("steps", ParamValue::Bool(true))]);
        assert!(matches!(
            validate_spec(&s, t2i, all_images),
            Err(WorkflowError::ParamTypeMismatch(_))
        ));
    }

    #[test]
    fn slot_binding_is_by_modality_and_order() {
        let r = Registry::baseline();
        let se = r.get("wf-startend-i2v").unwrap();
        let (a, v, b) = (img(1), img(2), img(3));
        let modality = |id: &AssetId| Some(if *id == v { Modality::Video } else { Modality::Image });
        let n = validate_spec(&spec(vec![a.clone(), v.clone(), b.clone()], &[]), se, modality).unwrap();
        assert_eq!(n.bindings[0].asset_id.as_ref(), Some(&a));
        assert_eq!(n.bindings[1].asset_id.as_ref(), Some(&b));
        let err = validate_spec(&spec(vec![a, v.clone()], &[]), se, modality).unwrap_err();
        assert_eq!(err, WorkflowError::MissingRequiredInput("end_frame".into()));
    }

    #[test]
    fn unknown_reference() {
        let r = Registry::baseline();
        let err = validate_spec(&spec(vec![img(9)], &[]), r.get("wf-t2i").unwrap(), |_| None).unwrap_err();
        assert!(matches!(err, WorkflowError::UnknownAsset(_)));
    }
}
