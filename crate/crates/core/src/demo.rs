//! A miniature knowledge base and a copy-like response generator for
//! end-to-end runs without external data.
//!
//! Responses open with a fixed introduction sentence, then restate each
//! given argument phrase verbatim, joined only by stop-word connectors
//! ("Further,", "But"). Error-free examples therefore have perfect lexical
//! overlap with their inputs; organic faults are simulated by restating an
//! argument that was not given (hallucination) or dropping a given one
//! (coverage), with span annotations recorded for word-level evaluation.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::corpus::{
    save_examples, Argument, ArgumentSpan, ErrorClass, ErrorLabels, ErrorType, EvalSlice, Example,
    KnowledgeBase, Perspective, Provenance, SliceKind, Span, SpanAnnotations, Topic,
};
use crate::report::{evaluate, EvalOptions, EvalReport, MethodScores};
use crate::rouge::{RougeDetector, RougeOptions};
use crate::salience::synthetic::synthetic_map;
use crate::salience::{Aggregation, MeanKind, SalienceDetector};
use crate::scores::{rouge_records, salience_records, save_scores, ExampleScoreRecord};
use crate::synth::{generate_synthetic_corpus, SynthCorpus};
use crate::textproc::TextProcessor;
use crate::{corpus, seed, Error, Result};

const INTRO: &str = "Here is a balanced overview of the debate.";
const TEMPERATURES: [f64; 3] = [0.0, 0.5, 1.0];

/// (title, query, pro phrases, con phrases)
type TopicText = (&'static str, &'static str, [&'static str; 4], [&'static str; 4]);

const TOPICS: [TopicText; 8] = [
    (
        "Abortion",
        "Should abortion be legal?",
        [
            "Bodily autonomy is a fundamental human right",
            "Legal procedures are safer than clandestine ones",
            "Restrictions burden low income families disproportionately",
            "Doctors and patients should make medical decisions privately",
        ],
        [
            "Fetal life deserves protection from conception",
            "Adoption offers an alternative for unwanted pregnancies",
            "Many religious traditions consider termination immoral",
            "Taxpayer money should not fund controversial operations",
        ],
    ),
    (
        "Minimum Wage",
        "Should the federal minimum wage be increased?",
        [
            "Higher pay lifts working households out of poverty",
            "Raising earnings boosts consumer spending locally",
            "Inflation has eroded purchasing power since 2009",
            "Better compensated staff quit less often",
        ],
        [
            "Employers may cut jobs or hours",
            "Small businesses face thinner margins",
            "Automation becomes more attractive than hiring",
            "Regional living costs vary too widely for one national floor",
        ],
    ),
    (
        "School Uniforms",
        "Should students wear school uniforms?",
        [
            "Uniforms reduce bullying over fashion",
            "Matching outfits improve campus safety",
            "Parents save money on clothing budgets",
            "Standard dress fosters community identity",
        ],
        [
            "Mandatory attire restricts personal expression",
            "Research shows no academic improvement",
            "Required garments impose costs on poor households",
            "Conformity teaches obedience rather than individuality",
        ],
    ),
    (
        "Vegetarianism",
        "Should people become vegetarian?",
        [
            "Plant diets lower heart disease risk",
            "Livestock farming drives deforestation and emissions",
            "Slaughter causes needless animal suffering",
            "Vegetables and grains feed more people per acre",
        ],
        [
            "Meat provides complete protein and vitamin B12",
            "Grazing can restore degraded grasslands",
            "Culinary traditions center on fish and poultry",
            "Strict menus risk iron deficiency",
        ],
    ),
    (
        "Universal Basic Income",
        "Should the government provide a universal basic income?",
        [
            "Guaranteed cash eliminates extreme poverty",
            "Unconditional payments cut welfare bureaucracy",
            "Workers gain leverage to refuse exploitative jobs",
            "Income security supports entrepreneurship and education",
        ],
        [
            "Funding requires massive tax increases",
            "Free money discourages employment",
            "Universal grants waste resources on wealthy recipients",
            "Price inflation could erase benefits",
        ],
    ),
    (
        "Social Media",
        "Are social media platforms good for society?",
        [
            "Online networks connect distant friends and relatives",
            "Activists organize movements quickly",
            "Creators reach audiences without gatekeepers",
            "Emergency alerts spread rapidly during disasters",
        ],
        [
            "Feeds amplify misinformation",
            "Teen anxiety correlates with heavy scrolling",
            "Companies harvest personal data for advertising",
            "Algorithms polarize political debate",
        ],
    ),
    (
        "Police Body Cameras",
        "Should police officers wear body cameras?",
        [
            "Recordings provide objective evidence in court",
            "Footage deters misconduct by officers",
            "Video increases public trust in law enforcement",
            "Complaints against departments decline",
        ],
        [
            "Storage costs strain municipal budgets",
            "Devices invade bystander privacy",
            "Officers can switch equipment off selectively",
            "Studies find little change in use of force",
        ],
    ),
    (
        "Fracking",
        "Should fracking be banned?",
        [
            "Hydraulic fracturing contaminates groundwater",
            "Drilling releases methane that warms the planet",
            "Wastewater injection triggers earthquakes",
            "Fossil investment delays renewable energy adoption",
        ],
        [
            "Shale gas lowers household energy bills",
            "The industry supports many rural jobs",
            "Natural gas burns cleaner than coal",
            "Domestic production strengthens national security",
        ],
    ),
];

fn slug(title: &str) -> String {
    title
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// The bundled knowledge base: eight topics with four arguments per side.
/// Topic ids match the topic names of the default split file.
pub fn mini_kb() -> KnowledgeBase {
    let topics = TOPICS
        .iter()
        .map(|(title, query, pro, con)| {
            let s = slug(title);
            let arguments = pro
                .iter()
                .enumerate()
                .map(|(i, p)| Argument::new(format!("{s}-pro-{}", i + 1), Perspective::Pro, *p))
                .chain(
                    con.iter()
                        .enumerate()
                        .map(|(i, p)| Argument::new(format!("{s}-con-{}", i + 1), Perspective::Con, *p)),
                )
                .collect();
            Topic {
                id: title.to_string(),
                title: title.to_string(),
                query: query.to_string(),
                arguments,
            }
        })
        .collect();
    KnowledgeBase { topics }
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Builds the copy-like response restating `pro` then `con` phrases, and
/// the response span of each restated argument.
pub fn render_response(pro: &[&Argument], con: &[&Argument]) -> (String, Span, Vec<ArgumentSpan>) {
    let mut text = String::from(INTRO);
    text.push(' ');
    let main_start = text.chars().count();
    let mut spans = Vec::new();
    let mut sentence = |text: &mut String, connector: &str, arg: &Argument, first: bool| {
        if !text.ends_with(' ') {
            text.push(' ');
        }
        text.push_str(connector);
        let start = text.chars().count();
        let phrase = if first && connector.is_empty() {
            arg.phrase.clone()
        } else {
            lower_first(&arg.phrase)
        };
        text.push_str(&phrase);
        spans.push(ArgumentSpan {
            argument_id: arg.id.clone(),
            span: Span::new(start, start + phrase.chars().count()),
        });
        text.push('.');
    };
    for (i, arg) in pro.iter().enumerate() {
        sentence(&mut text, if i == 0 { "" } else { "Further, " }, arg, i == 0);
    }
    for (i, arg) in con.iter().enumerate() {
        sentence(&mut text, if i == 0 { "But " } else { "Further, " }, arg, false);
    }
    let main = Span::new(main_start, text.chars().count());
    (text, main, spans)
}

fn choose<'a>(rng: &mut impl Rng, pool: &[&'a Argument], k: usize) -> Vec<&'a Argument> {
    let mut idx = sample(rng, pool.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

fn base_example(topic: &Topic, id: String, pro: &[&Argument], con: &[&Argument], temperature: f64) -> Example {
    Example {
        id,
        topic_id: topic.id.clone(),
        query: topic.query.clone(),
        pro_args: pro.iter().map(|a| (*a).clone()).collect(),
        con_args: con.iter().map(|a| (*a).clone()).collect(),
        response: String::new(),
        main_response_span: None,
        temperature: Some(temperature),
        paraphrased: false,
        labels: ErrorLabels::error_free(),
        annotations: None,
        provenance: Provenance::Organic,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DemoConfig {
    pub seed: u64,
    /// Error-free examples per topic.
    pub clean_per_topic: usize,
    /// Organic faults of each type per topic.
    pub faults_per_topic: usize,
    pub n_perm: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clean_per_topic: 7,
            faults_per_topic: 2,
            n_perm: 2000,
        }
    }
}

/// Organic examples for every topic of `kb`: error-free copies plus
/// simulated hallucination and coverage faults.
pub fn generate_examples(kb: &KnowledgeBase, config: &DemoConfig) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (t, topic) in kb.topics.iter().enumerate() {
        let mut rng = seed::stream_rng(seed::derive(config.seed, "demo"), t as u64);
        let pro: Vec<&Argument> = topic.arguments_for(Perspective::Pro).collect();
        let con: Vec<&Argument> = topic.arguments_for(Perspective::Con).collect();
        if pro.len() < 3 || con.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "demo topic `{}` needs at least three arguments per side",
                topic.id
            )));
        }
        let s = slug(&topic.id);
        let mut n = 0;
        let mut next_temp = || {
            n += 1;
            TEMPERATURES[n % TEMPERATURES.len()]
        };

        for j in 0..config.clean_per_topic {
            let k = 1 + j % 2;
            let (p, c) = (choose(&mut rng, &pro, k), choose(&mut rng, &con, k));
            let mut ex = base_example(topic, format!("{s}-{j:02}"), &p, &c, next_temp());
            let (text, main, covered) = render_response(&p, &c);
            ex.response = text;
            ex.main_response_span = Some(main);
            ex.annotations = Some(SpanAnnotations {
                covered_spans: covered,
                ..Default::default()
            });
            out.push(ex);
        }

        for j in 0..config.faults_per_topic {
            // Hallucination: restate one extra argument of a random side.
            let (p, c) = (choose(&mut rng, &pro, 2), choose(&mut rng, &con, 2));
            let side = if rng.gen::<bool>() { Perspective::Pro } else { Perspective::Con };
            let (given, pool) = match side {
                Perspective::Pro => (&p, &pro),
                Perspective::Con => (&c, &con),
            };
            let unused: Vec<&Argument> = pool.iter().copied().filter(|a| !given.iter().any(|g| g.id == a.id)).collect();
            let extra = unused[rng.gen_range(0..unused.len())];
            let (mut rp, mut rc) = (p.clone(), c.clone());
            match side {
                Perspective::Pro => rp.push(extra),
                Perspective::Con => rc.push(extra),
            }
            let mut ex = base_example(topic, format!("{s}-hal-{j}"), &p, &c, next_temp());
            let (text, main, spans) = render_response(&rp, &rc);
            let (halluc, covered): (Vec<ArgumentSpan>, Vec<ArgumentSpan>) =
                spans.into_iter().partition(|a| a.argument_id == extra.id);
            ex.response = text;
            ex.main_response_span = Some(main);
            ex.labels.hallucination = ErrorClass::Full;
            ex.annotations = Some(SpanAnnotations {
                covered_spans: covered,
                hallucinated_response_spans: halluc.into_iter().map(|a| a.span).collect(),
                ..Default::default()
            });
            out.push(ex);

            // Coverage: drop one given argument from the response.
            let (p, c) = (choose(&mut rng, &pro, 2), choose(&mut rng, &con, 2));
            let dropped = if rng.gen::<bool>() { p[rng.gen_range(0..2)] } else { c[rng.gen_range(0..2)] };
            let rp: Vec<&Argument> = p.iter().copied().filter(|a| a.id != dropped.id).collect();
            let rc: Vec<&Argument> = c.iter().copied().filter(|a| a.id != dropped.id).collect();
            let mut ex = base_example(topic, format!("{s}-cov-{j}"), &p, &c, next_temp());
            let (text, main, covered) = render_response(&rp, &rc);
            ex.response = text;
            ex.main_response_span = Some(main);
            ex.labels.coverage = ErrorClass::Full;
            ex.annotations = Some(SpanAnnotations {
                covered_spans: covered,
                uncovered_argument_spans: vec![ArgumentSpan {
                    argument_id: dropped.id.clone(),
                    span: Span::new(0, dropped.full_text().chars().count()),
                }],
                ..Default::default()
            });
            out.push(ex);
        }
    }
    for ex in &out {
        ex.validate_against(kb)?;
    }
    Ok(out)
}

/// Everything a demo run produces.
#[derive(Clone, Debug)]
pub struct DemoRun {
    pub kb: KnowledgeBase,
    pub organic: Vec<Example>,
    pub synthetic: SynthCorpus,
    pub scores: Vec<MethodScores>,
    pub slices: Vec<EvalSlice>,
    pub report: EvalReport,
}

impl DemoRun {
    /// Organic and synthetic examples together.
    pub fn all_examples(&self) -> Vec<Example> {
        self.organic
            .iter()
            .chain(&self.synthetic.examples)
            .cloned()
            .collect()
    }

    pub fn method(&self, name: &str) -> Option<&[ExampleScoreRecord]> {
        self.scores
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.records.as_slice())
    }

    /// Writes every artifact into `dir`, which must exist.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.kb.save(&dir.join("kb.json"))?;
        save_examples(&self.organic, &dir.join("examples.json"))?;
        save_examples(&self.synthetic.examples, &dir.join("synthetic.json"))?;
        for m in &self.scores {
            save_scores(&m.records, &dir.join(format!("scores_{}.json", m.name)))?;
        }
        for s in &self.slices {
            s.save(&dir.join(format!("slice_{}_{}.json", s.kind.name(), s.error_type)))?;
        }
        self.report.save_json(&dir.join("report.json"))?;
        self.report.save_csv(&dir.join("report.csv"))
    }
}

pub const DEMO_SLICES: [SliceKind; 2] = [SliceKind::UnparaphrasedSynthetic, SliceKind::FullOrganic];

/// Builds the corpus, injects synthetic errors, scores everything with
/// ROUGE and with salience over synthetic maps, and evaluates on the
/// unparaphrased synthetic and full organic slices.
pub fn run(config: &DemoConfig) -> Result<DemoRun> {
    let kb = mini_kb();
    let organic = generate_examples(&kb, config)?;
    let error_free: Vec<Example> = organic.iter().filter(|e| e.labels.is_error_free()).cloned().collect();
    let synthetic = generate_synthetic_corpus(&error_free, &kb, seed::derive(config.seed, "synth"));
    let all: Vec<Example> = organic.iter().chain(&synthetic.examples).cloned().collect();

    let text = TextProcessor::english();
    let rouge = RougeDetector::new(text.clone(), RougeOptions::default());
    let salience = SalienceDetector::new(text.clone(), Aggregation::Max, MeanKind::Geometric);
    let map_seed = seed::derive(config.seed, "salience");
    let scores = vec![
        MethodScores {
            name: "rouge".into(),
            records: rouge_records(&all, &rouge, true)?,
        },
        MethodScores {
            name: "salience".into(),
            records: salience_records(&all, &salience, |e| synthetic_map(e, &text, map_seed), true)?,
        },
    ];

    let slices: Vec<EvalSlice> = DEMO_SLICES
        .iter()
        .flat_map(|kind| ErrorType::BOTH.map(|t| corpus::slice_test_set(&all, *kind, t)))
        .collect();
    let options = EvalOptions {
        n_perm: config.n_perm,
        seed: seed::derive(config.seed, "eval"),
        word_level: true,
    };
    let report = evaluate(&slices, &scores, &options)?;
    Ok(DemoRun {
        kb,
        organic,
        synthetic,
        scores,
        slices,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitAssignment;
    use crate::report::Granularity;

    #[test]
    fn kb_is_valid_and_in_test_split() {
        let kb = mini_kb();
        kb.validate().unwrap();
        let split = SplitAssignment::procon_default();
        for t in &kb.topics {
            assert!(split.test.contains(&t.id), "{}", t.id);
        }
        assert_eq!(kb.median_arguments_per_perspective(), Some(4.0));
    }

    #[test]
    fn rendered_spans_point_at_phrases() {
        let kb = mini_kb();
        let t = &kb.topics[1];
        let pro: Vec<&Argument> = t.arguments_for(Perspective::Pro).take(2).collect();
        let con: Vec<&Argument> = t.arguments_for(Perspective::Con).take(1).collect();
        let (text, main, spans) = render_response(&pro, &con);
        let chars: Vec<char> = text.chars().collect();
        for (s, a) in spans.iter().zip(pro.iter().chain(&con)) {
            let got: String = chars[s.span.start..s.span.end].iter().collect();
            assert_eq!(got.to_lowercase(), a.phrase.to_lowercase());
        }
        assert!(text.starts_with(INTRO));
        assert_eq!(main.end, chars.len());
        assert!(text.contains(". Further, raising earnings"));
        assert!(text.contains(". But employers"));
    }

    #[test]
    fn corpus_shape() {
        let config = DemoConfig::default();
        let examples = generate_examples(&mini_kb(), &config).unwrap();
        let clean = examples.iter().filter(|e| e.labels.is_error_free()).count();
        assert!(clean >= 50);
        assert_eq!(examples.len(), 8 * (7 + 4));
        let hal = examples
            .iter()
            .filter(|e| e.labels.get(ErrorType::Hallucination) == ErrorClass::Full)
            .count();
        assert_eq!(hal, 16);
        assert_eq!(examples, generate_examples(&mini_kb(), &config).unwrap());
    }

    #[test]
    fn error_free_examples_score_zero_with_rouge() {
        let examples = generate_examples(&mini_kb(), &DemoConfig::default()).unwrap();
        let rouge = RougeDetector::new(TextProcessor::english(), RougeOptions::default());
        for ex in examples.iter().filter(|e| e.labels.is_error_free()) {
            let s = rouge.example_scores(ex).unwrap();
            assert_eq!((s.hallucination, s.coverage), (0.0, 0.0), "{}", ex.id);
        }
    }

    #[test]
    fn demo_separates_planted_errors() {
        let run = run(&DemoConfig::default()).unwrap();
        for kind in DEMO_SLICES {
            for t in ErrorType::BOTH {
                for method in ["rouge", "salience"] {
                    let e = run.report.entry(kind, t, method, Granularity::Example).unwrap();
                    assert!(e.n_error > 0 && e.n_clean >= 50);
                    if method == "rouge" {
                        assert!(e.auc >= 0.95, "{kind:?} {t} {method}: {}", e.auc);
                    }
                }
            }
        }
    }
}
