//! Bundled pairwise compatibility tables for entity-relation labeling, and
//! the hand-written rules they are checked against.
//!
//! Three inequality systems score label pairs: (source entity, relation),
//! (relation, target entity), and (forward relation, backward relation).
//! Each system was learned from the exhaustive pair grid; the rules file
//! states the intended semantics independently, so agreement between the two
//! can be measured pair by pair.

use crate::error::{Error, Result};
use crate::extraction::{is_feasible, ConstraintSystem};
use crate::features::{
    entity_index, pair_vector, relation_index, PairRole, ENTITY_LABELS, RELATION_LABELS,
};
use std::collections::HashMap;
use std::sync::OnceLock;

const SOURCE_RELATION_TEXT: &str = include_str!("../data/er_source_relation.system");
const RELATION_TARGET_TEXT: &str = include_str!("../data/er_relation_target.system");
const RELATION_RELATION_TEXT: &str = include_str!("../data/er_relation_relation.system");
const DESIGNED_RULES_TEXT: &str = include_str!("../data/er_designed_rules.tsv");

fn bundled(cell: &'static OnceLock<ConstraintSystem>, text: &str) -> &'static ConstraintSystem {
    cell.get_or_init(|| ConstraintSystem::from_text(text).expect("bundled table parses"))
}

/// Inequalities over (source entity, relation) pairs.
pub fn source_relation_table() -> &'static ConstraintSystem {
    static CELL: OnceLock<ConstraintSystem> = OnceLock::new();
    bundled(&CELL, SOURCE_RELATION_TEXT)
}

/// Inequalities over (relation, target entity) pairs.
pub fn relation_target_table() -> &'static ConstraintSystem {
    static CELL: OnceLock<ConstraintSystem> = OnceLock::new();
    bundled(&CELL, RELATION_TARGET_TEXT)
}

/// Inequalities over (forward relation, backward relation) pairs.
pub fn relation_relation_table() -> &'static ConstraintSystem {
    static CELL: OnceLock<ConstraintSystem> = OnceLock::new();
    bundled(&CELL, RELATION_RELATION_TEXT)
}

/// The argument signature of one relation: which entity types it connects
/// and which relation the target emits back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationRule {
    pub relation: String,
    pub source: String,
    pub target: String,
    pub reverse: String,
}

/// Hand-written relation signatures; `NoRel` carries no rule and is
/// compatible with everything.
#[derive(Debug, Clone)]
pub struct DesignedRules {
    rules: Vec<RelationRule>,
    by_relation: HashMap<String, usize>,
}

impl DesignedRules {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        let mut by_relation = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    i + 1,
                    format!("expected 4 tab-separated fields, got {}", fields.len()),
                ));
            }
            relation_index(fields[0])?;
            entity_index(fields[1])?;
            entity_index(fields[2])?;
            relation_index(fields[3])?;
            if by_relation.insert(fields[0].to_string(), rules.len()).is_some() {
                return Err(Error::parse(i + 1, format!("duplicate rule for {:?}", fields[0])));
            }
            rules.push(RelationRule {
                relation: fields[0].to_string(),
                source: fields[1].to_string(),
                target: fields[2].to_string(),
                reverse: fields[3].to_string(),
            });
        }
        if rules.is_empty() {
            return Err(Error::EmptyInput("designed rules"));
        }
        Ok(DesignedRules { rules, by_relation })
    }

    /// The rules bundled with the crate, one per real relation.
    pub fn bundled() -> &'static DesignedRules {
        static CELL: OnceLock<DesignedRules> = OnceLock::new();
        CELL.get_or_init(|| DesignedRules::parse(DESIGNED_RULES_TEXT).expect("bundled rules parse"))
    }

    pub fn rules(&self) -> &[RelationRule] {
        &self.rules
    }

    fn rule(&self, relation: &str) -> Result<Option<&RelationRule>> {
        if relation == "NoRel" {
            return Ok(None);
        }
        relation_index(relation)?;
        Ok(self.by_relation.get(relation).map(|&i| &self.rules[i]))
    }

    /// May `source` emit `relation`?
    pub fn allows_source(&self, source: &str, relation: &str) -> Result<bool> {
        entity_index(source)?;
        Ok(match self.rule(relation)? {
            None => true,
            Some(rule) => rule.source == source,
        })
    }

    /// May `relation` point at `target`?
    pub fn allows_target(&self, relation: &str, target: &str) -> Result<bool> {
        entity_index(target)?;
        Ok(match self.rule(relation)? {
            None => true,
            Some(rule) => rule.target == target,
        })
    }

    /// May the two directions of one entity pair carry these relations?
    pub fn allows_relation_pair(&self, forward: &str, backward: &str) -> Result<bool> {
        let fwd_ok = match self.rule(forward)? {
            None => true,
            Some(rule) => rule.reverse == backward,
        };
        let bwd_ok = match self.rule(backward)? {
            None => true,
            Some(rule) => rule.reverse == forward,
        };
        Ok(fwd_ok && bwd_ok)
    }
}

/// One grid cell of a table/rule comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAgreement {
    pub first: String,
    pub second: String,
    /// Whether the learned inequality system accepts the pair.
    pub learned: bool,
    /// Whether the hand-written rules accept the pair.
    pub designed: bool,
    /// Smallest inequality margin on the pair (negative means a violation).
    pub margin: f64,
}

impl PairAgreement {
    pub fn agrees(&self) -> bool {
        self.learned == self.designed
    }
}

/// Agreement of one learned table with the designed rules over its full grid.
#[derive(Debug, Clone)]
pub struct AgreementReport {
    pub table: String,
    pub pairs: Vec<PairAgreement>,
    pub disagreements: usize,
}

fn min_margin(system: &ConstraintSystem, psi: &[f64]) -> f64 {
    system
        .inequalities
        .iter()
        .map(|row| row.margin(psi))
        .fold(f64::INFINITY, f64::min)
}

fn grid_labels(role: PairRole) -> (&'static [&'static str], &'static [&'static str]) {
    match role {
        PairRole::SourceRelation => (&ENTITY_LABELS[..], &RELATION_LABELS[..]),
        PairRole::RelationTarget => (&RELATION_LABELS[..], &ENTITY_LABELS[..]),
        PairRole::RelationRelation => (&RELATION_LABELS[..], &RELATION_LABELS[..]),
    }
}

/// Compare one learned table against the designed rules over every pair.
pub fn evaluate_table(role: PairRole, system: &ConstraintSystem, rules: &DesignedRules) -> Result<AgreementReport> {
    let (firsts, seconds) = grid_labels(role);
    let table = match role {
        PairRole::SourceRelation => "source-relation",
        PairRole::RelationTarget => "relation-target",
        PairRole::RelationRelation => "relation-relation",
    };
    let mut pairs = Vec::with_capacity(firsts.len() * seconds.len());
    for (a, first) in firsts.iter().enumerate() {
        for (b, second) in seconds.iter().enumerate() {
            let psi = pair_vector(role, a, b);
            let learned = is_feasible(system, &psi)?;
            let designed = match role {
                PairRole::SourceRelation => rules.allows_source(first, second)?,
                PairRole::RelationTarget => rules.allows_target(first, second)?,
                PairRole::RelationRelation => rules.allows_relation_pair(first, second)?,
            };
            pairs.push(PairAgreement {
                first: first.to_string(),
                second: second.to_string(),
                learned,
                designed,
                margin: min_margin(system, &psi),
            });
        }
    }
    let disagreements = pairs.iter().filter(|p| !p.agrees()).count();
    Ok(AgreementReport { table: table.to_string(), pairs, disagreements })
}

/// Evaluate all three bundled tables against the bundled rules.
pub fn eval_er_tables() -> Result<Vec<AgreementReport>> {
    let rules = DesignedRules::bundled();
    Ok(vec![
        evaluate_table(PairRole::SourceRelation, source_relation_table(), rules)?,
        evaluate_table(PairRole::RelationTarget, relation_target_table(), rules)?,
        evaluate_table(PairRole::RelationRelation, relation_relation_table(), rules)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_parse_with_expected_shapes() {
        assert_eq!(source_relation_table().input_dim, 10);
        assert_eq!(source_relation_table().len(), 3);
        assert_eq!(relation_target_table().input_dim, 10);
        assert_eq!(relation_target_table().len(), 3);
        assert_eq!(relation_relation_table().input_dim, 12);
        assert_eq!(relation_relation_table().len(), 1);
    }

    #[test]
    fn rules_cover_every_real_relation() {
        let rules = DesignedRules::bundled();
        assert_eq!(rules.rules().len(), RELATION_LABELS.len() - 1);
        for relation in RELATION_LABELS.iter().skip(1) {
            assert!(rules.rules().iter().any(|r| r.relation == *relation));
        }
    }

    #[test]
    fn rule_semantics_match_hand_expectations() {
        let rules = DesignedRules::bundled();
        assert!(rules.allows_source("Person", "Kill").unwrap());
        assert!(!rules.allows_source("Location", "Kill").unwrap());
        assert!(rules.allows_source("Location", "NoRel").unwrap());
        assert!(rules.allows_target("OrgBasedIn", "Location").unwrap());
        assert!(!rules.allows_target("OrgBasedIn", "Organization").unwrap());
        assert!(rules.allows_relation_pair("Kill", "NoRel").unwrap());
        assert!(rules.allows_relation_pair("NoRel", "Kill").unwrap());
        assert!(rules.allows_relation_pair("NoRel", "NoRel").unwrap());
        assert!(!rules.allows_relation_pair("Kill", "LiveIn").unwrap());
        assert!(!rules.allows_relation_pair("Kill", "Kill").unwrap());
        assert!(rules.allows_source("Person", "WorkFor").unwrap());
        assert!(matches!(rules.allows_source("Robot", "Kill"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn every_grid_cell_agrees() {
        let reports = eval_er_tables().unwrap();
        let sizes: Vec<usize> = reports.iter().map(|r| r.pairs.len()).collect();
        assert_eq!(sizes, vec![24, 24, 36]);
        for report in &reports {
            assert_eq!(report.disagreements, 0, "table {} disagrees", report.table);
        }
        assert_eq!(reports.iter().map(|r| r.pairs.len()).sum::<usize>(), 84);
    }

    #[test]
    fn location_kill_margin_is_the_known_violation() {
        // Location cannot emit Kill: the first inequality of the
        // source-relation table fails by -1.90 - 2.84 + 0.32 = -4.42.
        let reports = eval_er_tables().unwrap();
        let cell = reports[0]
            .pairs
            .iter()
            .find(|p| p.first == "Location" && p.second == "Kill")
            .unwrap();
        assert!(!cell.learned);
        assert!(!cell.designed);
        assert!((cell.margin - (-4.42)).abs() < 1e-12);
    }

    #[test]
    fn rules_parser_rejects_malformed_rows() {
        assert!(matches!(
            DesignedRules::parse("Kill\tPerson\tPerson"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            DesignedRules::parse("Kill\tPerson\tPerson\tNoRel\nKill\tPerson\tPerson\tNoRel"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(DesignedRules::parse("").is_err());
        assert!(DesignedRules::parse("Kill\tRobot\tPerson\tNoRel").is_err());
    }
}
