use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CoreError;
use crate::hierarchy::{LabelHierarchy, LabelId};
use crate::prediction::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyVariant {
    Top3AnyOutsideParent,
    Top1WrongOutsideParent,
    Top3ExcludesTrue,
}

/// How `Top3AnyOutsideParent` quantifies over the top-k labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ParentRule {
    /// At least one top-k label lies outside the truth's parent group.
    Any,
    /// Every top-k label lies outside the truth's parent group.
    #[default]
    All,
}

/// Which misclassifications count as failures.
///
/// String form: `top3-any-outside-parent`, `top1-wrong-outside-parent` or
/// `top3-excludes-true`, optionally followed by `/k=N` (when `k != 3`) and
/// `/any` (for the existential parent rule).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FailurePolicy {
    pub variant: PolicyVariant,
    pub k: usize,
    pub parent_rule: ParentRule,
}

impl FailurePolicy {
    pub fn new(variant: PolicyVariant) -> Self {
        FailurePolicy {
            variant,
            k: 3,
            parent_rule: ParentRule::All,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_parent_rule(mut self, rule: ParentRule) -> Self {
        self.parent_rule = rule;
        self
    }

    /// Number of prediction entries the policy inspects.
    pub fn required_k(&self) -> usize {
        match self.variant {
            PolicyVariant::Top1WrongOutsideParent => 1,
            _ => self.k,
        }
    }
}

impl Default for FailurePolicy {
    fn default() -> Self {
        FailurePolicy::new(PolicyVariant::Top3AnyOutsideParent)
    }
}

/// Decides whether `pred` is a failure for ground truth `truth`.
pub fn is_failure(
    pred: &Prediction,
    truth: &LabelId,
    policy: &FailurePolicy,
    hierarchy: &LabelHierarchy,
) -> Result<bool, CoreError> {
    let need = policy.required_k();
    if need == 0 {
        return Err(CoreError::InvalidPolicy("k must be at least 1".into()));
    }
    if pred.k() < need {
        return Err(CoreError::PredictionTooShort { got: pred.k(), need });
    }
    let top = &pred.entries()[..need];
    let top1 = &top[0].label;
    match policy.variant {
        PolicyVariant::Top3ExcludesTrue => Ok(top.iter().all(|e| &e.label != truth)),
        PolicyVariant::Top1WrongOutsideParent => {
            Ok(top1 != truth && !hierarchy.same_parent(top1, truth)?)
        }
        PolicyVariant::Top3AnyOutsideParent => {
            if top1 == truth {
                return Ok(false);
            }
            let mut outside = Vec::with_capacity(top.len());
            for e in top {
                outside.push(!hierarchy.same_parent(&e.label, truth)?);
            }
            Ok(match policy.parent_rule {
                ParentRule::All => outside.iter().all(|&o| o),
                ParentRule::Any => outside.iter().any(|&o| o),
            })
        }
    }
}

impl fmt::Display for FailurePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.variant {
            PolicyVariant::Top3AnyOutsideParent => "top3-any-outside-parent",
            PolicyVariant::Top1WrongOutsideParent => "top1-wrong-outside-parent",
            PolicyVariant::Top3ExcludesTrue => "top3-excludes-true",
        };
        f.write_str(name)?;
        if self.k != 3 && self.variant != PolicyVariant::Top1WrongOutsideParent {
            write!(f, "/k={}", self.k)?;
        }
        if self.parent_rule == ParentRule::Any
            && self.variant == PolicyVariant::Top3AnyOutsideParent
        {
            f.write_str("/any")?;
        }
        Ok(())
    }
}

impl FromStr for FailurePolicy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CoreError::InvalidPolicy(s.to_string());
        let mut parts = s.trim().split('/');
        let variant = match parts.next().ok_or_else(bad)? {
            "top3-any-outside-parent" => PolicyVariant::Top3AnyOutsideParent,
            "top1-wrong-outside-parent" => PolicyVariant::Top1WrongOutsideParent,
            "top3-excludes-true" => PolicyVariant::Top3ExcludesTrue,
            _ => return Err(bad()),
        };
        let mut policy = FailurePolicy::new(variant);
        for part in parts {
            if let Some(k) = part.strip_prefix("k=") {
                policy.k = k.parse().map_err(|_| bad())?;
                if policy.k == 0 {
                    return Err(bad());
                }
            } else if part == "any" {
                policy.parent_rule = ParentRule::Any;
            } else if part == "all" {
                policy.parent_rule = ParentRule::All;
            } else {
                return Err(bad());
            }
        }
        Ok(policy)
    }
}

impl Serialize for FailurePolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FailurePolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::tests::toy;
    use crate::prediction::LabelScore;
    use proptest::prelude::*;

    fn pred(labels: &[&str]) -> Prediction {
        Prediction::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| LabelScore {
                    label: (*l).into(),
                    score: -(i as f64),
                })
                .collect(),
        )
        .unwrap()
    }

    fn p(v: PolicyVariant) -> FailurePolicy {
        FailurePolicy::new(v)
    }

    #[test]
    fn all_inside_parent_is_not_a_failure() {
        let h = toy();
        let r = is_failure(
            &pred(&["bee", "wasp", "fly"]),
            &"fly".into(),
            &p(PolicyVariant::Top3AnyOutsideParent),
            &h,
        );
        assert_eq!(r, Ok(false));
    }

    #[test]
    fn top1_outside_parent() {
        let h = toy();
        let r = is_failure(
            &pred(&["chainlink-fence"]),
            &"crayfish".into(),
            &p(PolicyVariant::Top1WrongOutsideParent),
            &h,
        );
        assert_eq!(r, Ok(true));
        let inside = is_failure(
            &pred(&["bee"]),
            &"fly".into(),
            &p(PolicyVariant::Top1WrongOutsideParent),
            &h,
        );
        assert_eq!(inside, Ok(false));
    }

    /// truth = fly, top-3 = [bee, flower, net]: enumerating the predicate
    /// by hand gives excludes-true = T, all-outside = F, any-outside = T.
    #[test]
    fn predicate_truth_table() {
        let h = toy();
        let pr = pred(&["bee", "flower", "net"]);
        let fly: LabelId = "fly".into();
        let excl = is_failure(&pr, &fly, &p(PolicyVariant::Top3ExcludesTrue), &h).unwrap();
        let all = is_failure(&pr, &fly, &p(PolicyVariant::Top3AnyOutsideParent), &h).unwrap();
        let any = is_failure(
            &pr,
            &fly,
            &p(PolicyVariant::Top3AnyOutsideParent).with_parent_rule(ParentRule::Any),
            &h,
        )
        .unwrap();
        assert_eq!((excl, all, any), (true, false, true));
        // top-1 correct is never a failure under the parent rules
        let ok = pred(&["fly", "net", "flower"]);
        for rule in [ParentRule::Any, ParentRule::All] {
            let pol = p(PolicyVariant::Top3AnyOutsideParent).with_parent_rule(rule);
            assert_eq!(is_failure(&ok, &fly, &pol, &h), Ok(false));
        }
    }

    #[test]
    fn short_prediction_is_an_error() {
        let h = toy();
        let r = is_failure(
            &pred(&["bee", "net"]),
            &"fly".into(),
            &p(PolicyVariant::Top3ExcludesTrue),
            &h,
        );
        assert_eq!(r, Err(CoreError::PredictionTooShort { got: 2, need: 3 }));
    }

    #[test]
    fn unknown_predicted_label_is_reported() {
        let h = toy();
        let r = is_failure(
            &pred(&["moth"]),
            &"fly".into(),
            &p(PolicyVariant::Top1WrongOutsideParent),
            &h,
        );
        assert_eq!(r, Err(CoreError::UnknownLabel("moth".into())));
    }

    #[test]
    fn string_form_round_trips() {
        for s in [
            "top3-any-outside-parent",
            "top3-any-outside-parent/any",
            "top1-wrong-outside-parent",
            "top3-excludes-true",
            "top3-excludes-true/k=5",
        ] {
            let pol: FailurePolicy = s.parse().unwrap();
            assert_eq!(pol.to_string(), s);
        }
        assert!("top7".parse::<FailurePolicy>().is_err());
        assert!("top3-excludes-true/k=0".parse::<FailurePolicy>().is_err());
    }

    proptest! {
        #[test]
        fn excludes_true_monotone_in_k(perm in Just((0..7usize).collect::<Vec<_>>()).prop_shuffle(), truth in 0usize..7) {
            let h = toy();
            let leaves: Vec<LabelId> = h.leaves().cloned().collect();
            let names: Vec<&str> = perm.iter().map(|&i| leaves[i].as_str()).collect();
            let pr = pred(&names);
            let truth = &leaves[truth];
            for k in 1..=names.len() {
                let pol = p(PolicyVariant::Top3ExcludesTrue).with_k(k);
                if is_failure(&pr, truth, &pol, &h).unwrap() {
                    for smaller in 1..=k {
                        let pol = p(PolicyVariant::Top3ExcludesTrue).with_k(smaller);
                        prop_assert!(is_failure(&pr, truth, &pol, &h).unwrap());
                    }
                }
            }
        }
    }
}
