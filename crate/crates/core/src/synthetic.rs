//! Seeded generator of registration-style forms with known ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, EntityMap, Page, Schema, Word};

const PAGE_W: f64 = 612.0;
const PAGE_H: f64 = 792.0;
const CHAR_W: f64 = 6.0;
const SPACE_W: f64 = 4.0;
const LINE_H: f64 = 11.0;
const LINE_STEP: f64 = 18.0;
const MARGIN: f64 = 54.0;

const FIRST: [&str; 16] = [
    "Jim", "Akira", "Catherine", "Miguel", "Priya", "Olena", "Tomas", "Grace", "Samuel", "Ines", "Henrik", "Leila",
    "Dmitri", "Ana", "Kwame", "Rosa",
];
const LAST: [&str; 16] = [
    "Slattery", "Tanaka", "Redman", "Alvarez", "Raman", "Kovalenko", "Novak", "Okafor", "Whitfield", "Duarte",
    "Lindgren", "Haddad", "Petrov", "Costa", "Mensah", "Bianchi",
];
const FIRMS: [&str; 8] = ["Associates", "Partners LLP", "Group Inc.", "Strategies LLC", "Consulting", "& Co.", "Advisors", "Law Offices"];
const COUNTRIES: [&str; 10] = [
    "Zandoria", "Kestrel Islands", "Valmora", "Ostrava Republic", "Lumeria", "Pelagia", "Tarvos", "Norvale", "Quessa", "Ardenne",
];
const BODIES: [&str; 5] = ["Government of", "Ministry of Tourism of", "Embassy of", "Trade Office of", "Central Bank of"];
const TITLES: [&str; 8] = [
    "Managing Partner",
    "General Counsel",
    "President",
    "Director",
    "Chief Executive Officer",
    "Senior Vice President",
    "Principal",
    "General Manager",
];
const FILLER: [&str; 6] = [
    "Furnish this exhibit for each foreign principal listed in an initial statement",
    "and for each additional foreign principal acquired subsequently",
    "Answer each item fully and attach additional sheets where necessary",
    "This statement is filed pursuant to the Act as amended",
    "Public reporting burden for this collection is estimated to average one hour",
    "Send comments regarding this estimate to the Registration Unit",
];

fn person(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", FIRST.choose(rng).expect("names"), LAST.choose(rng).expect("names"))
}

fn principal(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", BODIES.choose(rng).expect("bodies"), COUNTRIES.choose(rng).expect("countries"))
}

struct Layout {
    words: Vec<Word>,
    y: f64,
}

impl Layout {
    fn line(&mut self, x: f64, text: &str) -> f64 {
        let mut x = x;
        for w in text.split_whitespace() {
            let width = w.chars().count() as f64 * CHAR_W;
            self.words.push(Word::new(w, [x, self.y, x + width, self.y + LINE_H]));
            x += width + SPACE_W;
        }
        x
    }

    fn newline(&mut self) {
        self.y += LINE_STEP;
    }

    fn gap(&mut self) {
        self.y += LINE_STEP * 0.8;
    }
}

/// One form; `filler_lines` pads the body to grow the token count.
pub fn generate_document(id: &str, rng: &mut ChaCha8Rng, filler_lines: usize) -> Document {
    let reg_num = rng.gen_range(1000..10000).to_string();
    let date = format!("{}-{:02}-{:02}", rng.gen_range(1960..2021), rng.gen_range(1..=12), rng.gen_range(1..=28));
    let registrant = if rng.gen_bool(0.5) {
        person(rng)
    } else {
        format!("{} {}", LAST.choose(rng).expect("names"), FIRMS.choose(rng).expect("firms"))
    };
    let n_principals = if rng.gen_bool(0.2) { 2 } else { 1 };
    let mut principals: Vec<String> = Vec::new();
    while principals.len() < n_principals {
        let p = principal(rng);
        if !principals.contains(&p) {
            principals.push(p);
        }
    }
    let signer = person(rng);
    let title = TITLES.choose(rng).expect("titles").to_string();

    let mut l = Layout { words: Vec::new(), y: MARGIN };
    l.line(MARGIN + 150.0, "U.S. Department of Justice");
    l.newline();
    l.line(MARGIN + 170.0, "Washington, DC 20530");
    l.newline();
    l.gap();
    l.line(MARGIN + 110.0, "Exhibit A to Registration Statement");
    l.newline();
    l.gap();
    l.line(MARGIN, "1. Name and Address of Registrant");
    l.line(MARGIN + 300.0, "2. Registration No.");
    l.newline();
    l.line(MARGIN, &registrant);
    l.line(MARGIN + 300.0, &reg_num);
    l.newline();
    l.gap();
    l.line(MARGIN, "3. Name of Foreign Principal");
    l.newline();
    for p in &principals {
        l.line(MARGIN, p);
        l.newline();
    }
    l.gap();
    for i in 0..filler_lines {
        l.line(MARGIN, FILLER[i % FILLER.len()]);
        l.newline();
    }
    l.gap();
    l.line(MARGIN, "Date of Exhibit A");
    l.line(MARGIN + 300.0, "Name and Title of Signer");
    l.newline();
    l.line(MARGIN, &date);
    let end = l.line(MARGIN + 300.0, &signer);
    l.line(end + 2.0 * CHAR_W, &title);
    l.newline();

    let mut gt = EntityMap::new();
    gt.insert("file_date".into(), vec![date]);
    gt.insert("foreign_princ_name".into(), principals);
    gt.insert("registrant_name".into(), vec![registrant]);
    gt.insert("registration_num".into(), vec![reg_num]);
    gt.insert("signer_name".into(), vec![signer]);
    gt.insert("signer_title".into(), vec![title]);
    Document {
        id: id.to_string(),
        pages: vec![Page {
            width: PAGE_W,
            height: PAGE_H.max(l.y + MARGIN),
            words: l.words,
        }],
        ground_truth: gt,
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub test: Corpus,
    pub training: Corpus,
}

/// `n_test` scored forms plus `n_train` example forms, all with the
/// registration schema. Equal seeds give equal corpora.
pub fn generate_split(n_test: usize, n_train: usize, seed: u64, filler_lines: usize) -> SyntheticSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |prefix: &str, n: usize| {
        let docs: Vec<Document> = (0..n)
            .map(|i| generate_document(&format!("{prefix}-{i:04}"), &mut rng, filler_lines))
            .collect();
        Corpus::new(docs)
            .expect("generated documents are valid")
            .with_schema(Schema::vrdu_registration())
    };
    let test = make("synth", n_test);
    let training = make("train", n_train);
    SyntheticSplit { test, training }
}
