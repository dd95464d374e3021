use std::collections::{BTreeMap, BTreeSet};

use normlens::elicitation::{parse_sections, parse_summary};
use normlens::grounding::{parse_grounding, render_grounding, GroundingTemplate, JUSTIFY_RELEVANCE};
use normlens::schema::{
    Compatibility, DescriptionKind, DescriptionStatus, Emotion, Relevance, Turn, ViolationDetail, ViolationStatus,
};
use normlens::{Conversation, NormConcept, NormDescription, SymbolicGrounding};
use proptest::prelude::*;
use proptest::test_runner::TestRunner;

const ELICITED: &str = "\
**Summary:**
The conversation revolves around Zho Zpeng, his parents, and his relationship with a classmate. Mrs. Zuo disapproves of the classmate and questions the worth of giving her anything, while Mr. Zuo defends his son's actions. Zho Zpeng expresses his independence and asserts that he knows what he should and shouldn't do, asking his parents to trust him.

**Norms:**
**Respect for parents:** Filial piety and respect for parents are highly valued in Chinese culture. Children are expected to listen to and obey their parents' opinions and decisions.
**Unity within the family:** Maintaining harmony and unity within the family is important in Chinese culture. Conflicts or disagreements that disrupt family unity are generally discouraged.
**Social relationships and obligations:** Chinese culture places importance on maintaining positive relationships and fulfilling social obligations, such as giving gifts to classmates or friends.

**Violations:**
**Disrespectful language:** Mrs. Zuo uses derogatory language to refer to Zho Zpeng's classmate, which shows a lack of respect for others.
**Opposition towards Zho Zpeng's relationship:** Mrs. Zuo continuously opposes the relationship between Zho Zpeng and his classmate, going against the cultural norm of respecting children's autonomy and choices in relationships.

**Effects:**
**Disrespectful language - Observed effect:** It can create tension and animosity between Mrs. Zuo and Zho Zpeng.
**Opposition towards Zho Zpeng's relationship - Observed effect:** It causes disagreement and arguments between Mrs. Zuo and Mr. Zuo, highlighting a lack of unity within the family.
";

const GROUNDED: &str = "\
**Norm-Concept Compatibility:** match

**Relevance:** relevant
**Relevance Justification:** The conversation takes place within a family context, discussing the impending birth of a child, which inherently involves respect for family roles and responsibilities.

**Enactor Role:** younger family member
**Acceptor Role:** elder family member

**Quality Judgment:** accurate
**Justification:** The annotations correctly identify the compatibility of the social norm with the norm concept, the relevance to the family context, and the adherence to the norm in the conversation, reflecting a respectful interaction between the younger and elder family members.
";

fn speakers() -> BTreeSet<&'static str> {
    ["Xu Lihua", "Zuo Zhengpeng"].into()
}

pub fn elicitation_sections() {
    let s = parse_sections(ELICITED);
    assert!(s.diagnostics.is_empty(), "{:?}", s.diagnostics);
    let titles: Vec<&str> = s.norms.iter().map(|n| n.title.as_str()).collect();
    assert_eq!(
        titles,
        ["Respect for parents", "Unity within the family", "Social relationships and obligations"]
    );
    assert_eq!(
        s.norms[0].body,
        "Filial piety and respect for parents are highly valued in Chinese culture. Children are expected to listen to and obey their parents' opinions and decisions."
    );
    assert_eq!(
        s.norms[2].body,
        "Chinese culture places importance on maintaining positive relationships and fulfilling social obligations, such as giving gifts to classmates or friends."
    );
    assert_eq!(s.violations.len(), 2);
    assert_eq!(s.violations[0].title, "Disrespectful language");
    assert_eq!(s.violations[1].title, "Opposition towards Zho Zpeng's relationship");
    assert_eq!(
        s.violations[0].body,
        "Mrs. Zuo uses derogatory language to refer to Zho Zpeng's classmate, which shows a lack of respect for others."
    );
    assert_eq!(s.effects.len(), 2);
    assert_eq!(s.effects[0].violation_index, Some(0));
    assert_eq!(s.effects[0].reference, "Disrespectful language");
    assert_eq!(s.effects[0].label, "Observed effect");
    assert_eq!(s.effects[0].body, "It can create tension and animosity between Mrs. Zuo and Zho Zpeng.");
    assert_eq!(s.effects[1].violation_index, Some(1));
    assert_eq!(
        s.effects[1].body,
        "It causes disagreement and arguments between Mrs. Zuo and Mr. Zuo, highlighting a lack of unity within the family."
    );
}

pub fn elicitation_summary() {
    let block = ELICITED.split("**Norms:**").next().unwrap();
    let summary = parse_summary(block).unwrap();
    assert!(summary.starts_with("The conversation revolves around Zho Zpeng, his parents,"));
    assert!(summary.ends_with("asking his parents to trust him."));
}

pub fn grounding_output_fields() {
    let g = parse_grounding(GROUNDED, &speakers()).unwrap();
    assert_eq!(g.compatibility, Compatibility::Match);
    assert_eq!(g.relevance, Some(Relevance::Relevant));
    assert_eq!(g.enactor_role.as_deref(), Some("younger family member"));
    assert_eq!(g.acceptor_role.as_deref(), Some("elder family member"));
    assert_eq!(g.violation_status, None);
    assert!(g.violation.is_none());
    assert_eq!(
        g.justifications[JUSTIFY_RELEVANCE],
        "The conversation takes place within a family context, discussing the impending birth of a child, which inherently involves respect for family roles and responsibilities."
    );
    assert_eq!(g.justifications["Quality Judgment"], "accurate");
    assert!(g.justifications["Justification"].ends_with("between the younger and elder family members."));
}

pub fn grounding_input_renders_concept_slots() {
    let line = |speaker: &str, text: &str, index| Turn {
        index,
        speaker: speaker.into(),
        text: text.into(),
        labels: Default::default(),
    };
    let conversation = Conversation {
        id: "c".into(),
        source: "s".into(),
        language: "en".into(),
        turns: vec![
            line("Zuo Zhengpeng", "Lihua, how much longer until the baby is due?", 0),
            line("Xu Lihua", "Probably next week!", 1),
        ],
        relationships: Vec::new(),
        settings: Default::default(),
        summary: None,
    };
    let description = NormDescription {
        id: "d".into(),
        conversation_id: "c".into(),
        kind: DescriptionKind::Norm,
        title: "Respect for elders".into(),
        body: "It is common in Chinese culture to show respect to older family members, such as parents and grandparents.".into(),
        parent_id: None,
        status: DescriptionStatus::Raw,
    };
    let concept = NormConcept {
        id: "k".into(),
        name: "Respect for family elders".into(),
        description: "Respecting the wisdom, experience, and authority of elder members in the family hierarchy.".into(),
        settings: vec!["family".into()],
        violation_sketch: "Showing disrespect and ignoring suggestions and advice of any elder members of the family.".into(),
        actor_roles: "any younger family member".into(),
        recipient_roles: "elder family members such as parents, uncle, grandparents, etc.".into(),
        seed_ids: Vec::new(),
        good_ids: Vec::new(),
        bad_ids: Vec::new(),
        created_by: "a".into(),
        iteration: 0,
        created_at_version: 0,
    };
    let text = GroundingTemplate::default().render_user(&conversation, &description, &concept);
    for expected in [
        "Zuo Zhengpeng: Lihua, how much longer until the baby is due?",
        "Respect for elders: It is common in Chinese culture to show respect to older family members, such as parents and grandparents.",
        "Norm Concept Name: Respect for family elders",
        "Norm Concept Scenario: family",
        "Enactor Role: any younger family member",
        "Acceptor Role: elder family members such as parents, uncle, grandparents, etc.",
    ] {
        assert!(text.lines().any(|l| l == expected), "missing line {expected:?}");
    }
}

fn phrase() -> impl Strategy<Value = String> {
    "[a-z][a-z ,']{0,30}[a-z.]"
}

fn emotion() -> impl Strategy<Value = Emotion> {
    proptest::sample::select(Emotion::ALL.to_vec())
}

prop_compose! {
    fn violation()(action in phrase(), violator in phrase(), victim in phrase(), a in emotion(), b in emotion()) -> ViolationDetail {
        ViolationDetail { action, violator_role: violator, victim_role: victim, violator_emotion: a, victim_emotion: b }
    }
}

prop_compose! {
    fn grounding()(
        matched in any::<bool>(),
        relevant in any::<bool>(),
        enactor in phrase(),
        acceptor in phrase(),
        status in proptest::option::of(any::<bool>()),
        detail in violation(),
        whys in proptest::collection::vec(proptest::option::of(phrase()), 3),
        extra in proptest::option::of(("(Quality Judgment|Justification|Notes)", phrase())),
    ) -> SymbolicGrounding {
        let mut justifications = BTreeMap::new();
        if let Some(w) = &whys[0] {
            justifications.insert("compatibility".to_owned(), w.clone());
        }
        if let Some((k, v)) = extra {
            justifications.insert(k, v);
        }
        let mut g = SymbolicGrounding {
            description_id: "d".into(),
            concept_id: "k".into(),
            compatibility: if matched { Compatibility::Match } else { Compatibility::NoMatch },
            relevance: None,
            enactor_role: None,
            acceptor_role: None,
            violation_status: None,
            violation: None,
            justifications,
        };
        if matched {
            g.relevance = Some(if relevant { Relevance::Relevant } else { Relevance::Irrelevant });
            g.enactor_role = Some(enactor);
            g.acceptor_role = Some(acceptor);
            if let Some(w) = &whys[1] {
                g.justifications.insert("relevance".into(), w.clone());
            }
            if let Some(w) = &whys[2] {
                g.justifications.insert("violation_status".into(), w.clone());
            }
            g.violation_status = status.map(|v| if v { ViolationStatus::Violate } else { ViolationStatus::Adhere });
            if v_is_violate(g.violation_status) {
                g.violation = Some(detail);
            }
        }
        g
    }
}

fn v_is_violate(s: Option<ViolationStatus>) -> bool {
    s == Some(ViolationStatus::Violate)
}

pub fn grounding_round_trips() {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&grounding(), |g| {
            let text = render_grounding(&g);
            let back = parse_grounding(&text, &speakers()).unwrap().into_grounding("d", "k");
            prop_assert_eq!(back, g);
            Ok(())
        })
        .unwrap();
}

// The checks above are plain functions so the acceptance summary can call them too.
mod tests {
    #[test]
    fn elicitation_sections() {
        super::elicitation_sections();
    }

    #[test]
    fn elicitation_summary() {
        super::elicitation_summary();
    }

    #[test]
    fn grounding_output_fields() {
        super::grounding_output_fields();
    }

    #[test]
    fn grounding_input_renders_concept_slots() {
        super::grounding_input_renders_concept_slots();
    }

    #[test]
    fn grounding_round_trips() {
        super::grounding_round_trips();
    }
}
