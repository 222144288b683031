//! Rule augmentation: abduction, inversion and the staged pipeline
//! `ABD -> INV -> RW -> FIL`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::metrics::{filter_rules, FilterConfig};
use crate::rule::{dedup, Origin, Rule, RuleSet};
use crate::walk::{mine_rules, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enable_abduction: bool,
    pub enable_inversion: bool,
    pub enable_random_walk: bool,
    pub enable_filter: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig::all()
    }
}

impl AugmentConfig {
    pub fn all() -> Self {
        AugmentConfig {
            enable_abduction: true,
            enable_inversion: true,
            enable_random_walk: true,
            enable_filter: true,
        }
    }

    pub fn none() -> Self {
        AugmentConfig {
            enable_abduction: false,
            enable_inversion: false,
            enable_random_walk: false,
            enable_filter: false,
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.enable_abduction || self.enable_inversion || self.enable_random_walk || self.enable_filter
    }
}

/// One abductive rule per body position. For position `i` the assumed atom
/// `Bi` is inverted into the head and the body walks the remaining cycle:
/// `inv(Bi) <- B(i+1) .. BL inv(RH) B1 .. B(i-1)`.
pub fn abduce(rule: &Rule) -> Vec<Rule> {
    let l = rule.body.len();
    (0..l)
        .map(|i| {
            let mut body = Vec::with_capacity(l);
            body.extend_from_slice(&rule.body[i + 1..]);
            body.push(rule.head.inverse());
            body.extend_from_slice(&rule.body[..i]);
            Rule::new(rule.body[i].inverse(), body, Origin::Abduced)
        })
        .collect()
}

/// `inv(RH) <- inv(BL) .. inv(B1)`.
pub fn invert(rule: &Rule) -> Rule {
    Rule::new(
        rule.head.inverse(),
        rule.body.iter().rev().map(|b| b.inverse()).collect(),
        Origin::Inverted,
    )
}

/// Runs the enabled stages in fixed order. Inversion applies to the
/// originals and to any abduced rules; mining and filtering consult `kg`.
pub fn augment_pipeline(
    rules: &RuleSet,
    kg: &KnowledgeGraph,
    cfg: &AugmentConfig,
    walk_cfg: &WalkConfig,
    filter_cfg: &FilterConfig,
) -> Result<RuleSet> {
    if !cfg.any_enabled() {
        return Err(Error::Config("no augmentation stage enabled".into()));
    }
    if rules.is_empty() && !cfg.enable_random_walk {
        return Err(Error::Config("empty input rule set and mining disabled".into()));
    }
    let mut out = rules.clone();
    if cfg.enable_abduction {
        let abduced: Vec<Rule> = rules.iter().flat_map(abduce).collect();
        out.extend(abduced);
        log::info!("abduction: {} -> {} rules", rules.len(), out.len());
    }
    if cfg.enable_inversion {
        let inverted: Vec<Rule> = out.iter().map(invert).collect();
        let before = out.len();
        out.extend(inverted);
        log::info!("inversion: {before} -> {} rules", out.len());
    }
    if cfg.enable_random_walk {
        walk_cfg.validate()?;
        let mined = mine_rules(kg, walk_cfg)?;
        let before = out.len();
        out.extend(mined.into_rules());
        log::info!("random walks: {before} -> {} rules", out.len());
    }
    if cfg.enable_filter {
        filter_cfg.validate()?;
        let before = out.len();
        out = filter_rules(&out, kg, filter_cfg);
        log::info!("filter: {before} -> {} rules", out.len());
    }
    Ok(dedup(out.into_rules()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationId;

    // Relation ids: base relations at even ids, inverses at odd ids.
    const RH: RelationId = RelationId(0);
    const R1: RelationId = RelationId(2);
    const R2: RelationId = RelationId(4);
    const R3: RelationId = RelationId(6);

    fn inv(r: RelationId) -> RelationId {
        r.inverse()
    }

    fn shape(r: &Rule) -> (RelationId, Vec<RelationId>) {
        (r.head, r.body.clone())
    }

    #[test]
    fn abduce_three_atom_rule() {
        let rule = Rule::new(RH, vec![R1, R2, R3], Origin::Original);
        let got: Vec<_> = abduce(&rule).iter().map(shape).collect();
        assert_eq!(
            got,
            vec![
                (inv(R1), vec![R2, R3, inv(RH)]),
                (inv(R2), vec![R3, inv(RH), R1]),
                (inv(R3), vec![inv(RH), R1, R2]),
            ]
        );
        assert!(abduce(&rule).iter().all(|r| r.origin == Origin::Abduced));
    }

    #[test]
    fn abduce_nationality_second_position() {
        // Nationality <- BornIn PlaceInCountry, assuming PlaceInCountry.
        let (nat, born, place) = (RH, R1, R2);
        let rule = Rule::new(nat, vec![born, place], Origin::Original);
        let ab = abduce(&rule);
        assert_eq!(shape(&ab[1]), (inv(place), vec![inv(nat), born]));
    }

    #[test]
    fn abduce_single_atom() {
        let rule = Rule::new(RH, vec![R1], Origin::Original);
        let ab = abduce(&rule);
        assert_eq!(ab.len(), 1);
        assert_eq!(shape(&ab[0]), (inv(R1), vec![inv(RH)]));
    }

    #[test]
    fn invert_cases() {
        let rule = Rule::new(RH, vec![R1, R2, R3], Origin::Original);
        assert_eq!(shape(&invert(&rule)), (inv(RH), vec![inv(R3), inv(R2), inv(R1)]));
        assert!(invert(&invert(&rule)).same_shape(&rule));

        let (nat, born, place) = (RH, R1, R2);
        let rule = Rule::new(nat, vec![born, place], Origin::Original);
        assert_eq!(shape(&invert(&rule)), (inv(nat), vec![inv(place), inv(born)]));
    }

    fn dummy_kg() -> KnowledgeGraph {
        use crate::kg::RawTriple;
        let raw: Vec<_> = ["rh", "r1", "r2", "r3"]
            .iter()
            .map(|r| RawTriple::new("a", *r, "b"))
            .collect();
        KnowledgeGraph::build(&raw, &[], &[]).unwrap()
    }

    fn only(abd: bool, inv: bool) -> AugmentConfig {
        AugmentConfig {
            enable_abduction: abd,
            enable_inversion: inv,
            ..AugmentConfig::none()
        }
    }

    #[test]
    fn pipeline_abduction_only() {
        let kg = dummy_kg();
        let set = dedup([Rule::new(RH, vec![R1, R2], Origin::Original)]);
        let out = augment_pipeline(
            &set,
            &kg,
            &only(true, false),
            &WalkConfig::default(),
            &FilterConfig::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn pipeline_inversion_on_closed_set_is_fixed_point() {
        // A head never equals its own inverse, so a single rule cannot be its
        // own inversion; an inversion-closed pair is the smallest fixed point.
        let kg = dummy_kg();
        let rule = Rule::new(RH, vec![R1, inv(R1)], Origin::Original);
        let set = dedup([rule.clone(), invert(&rule)]);
        let out = augment_pipeline(
            &set,
            &kg,
            &only(false, true),
            &WalkConfig::default(),
            &FilterConfig::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.rules()[1].origin, Origin::Inverted);
    }

    #[test]
    fn pipeline_abduction_then_inversion() {
        let kg = dummy_kg();
        let rule = Rule::new(RH, vec![R1, R2, R3], Origin::Original);
        let set = dedup([rule.clone()]);
        let out = augment_pipeline(
            &set,
            &kg,
            &only(true, true),
            &WalkConfig::default(),
            &FilterConfig::default(),
        )
        .unwrap();
        // Oracle: hand-enumerated inversions of the original and its three abductions.
        let expected_inversions = [
            (inv(RH), vec![inv(R3), inv(R2), inv(R1)]),
            (R1, vec![RH, inv(R3), inv(R2)]),
            (R2, vec![inv(R1), RH, inv(R3)]),
            (R3, vec![inv(R2), inv(R1), RH]),
        ];
        assert_eq!(out.len(), 8);
        for e in &expected_inversions {
            assert!(out.iter().any(|r| shape(r) == *e), "missing {e:?}");
        }
    }

    #[test]
    fn pipeline_requires_a_stage() {
        let kg = dummy_kg();
        let set = dedup([Rule::new(RH, vec![R1], Origin::Original)]);
        let err = augment_pipeline(
            &set,
            &kg,
            &AugmentConfig::none(),
            &WalkConfig::default(),
            &FilterConfig::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
