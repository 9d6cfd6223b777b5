use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{find_chars, AnswerType, Corpus, QaItem, SourceFormat, Span, Split, HISTORY_WINDOW};
use crate::error::{Error, Result};

const NAMES: [(&str, &str); 16] = [
    ("Alan", "He"),
    ("Maria", "She"),
    ("Tom", "He"),
    ("Lucy", "She"),
    ("Omar", "He"),
    ("Nina", "She"),
    ("Paul", "He"),
    ("Sara", "She"),
    ("Ivan", "He"),
    ("Emma", "She"),
    ("Raj", "He"),
    ("Julia", "She"),
    ("Ben", "He"),
    ("Clara", "She"),
    ("Hugo", "He"),
    ("Mei", "She"),
];
const CITIES: [&str; 12] = [
    "Paris", "Boston", "Cairo", "Lima", "Oslo", "Dublin", "Madrid", "Tokyo", "Denver", "Lagos", "Vienna", "Perth",
];
const JOBS: [&str; 12] = [
    "teacher", "doctor", "baker", "farmer", "pilot", "nurse", "painter", "driver", "writer", "singer", "lawyer", "builder",
];
const PETS: [&str; 8] = ["dog", "cat", "parrot", "rabbit", "horse", "turtle", "goat", "hamster"];
const COLORS: [&str; 8] = ["black", "white", "brown", "gray", "red", "golden", "green", "yellow"];
const FOODS: [&str; 10] = ["rice", "pasta", "apples", "soup", "bread", "cheese", "fish", "beans", "cake", "salad"];
const SPORTS: [&str; 8] = ["tennis", "soccer", "chess", "golf", "hockey", "basketball", "cricket", "volleyball"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Fact {
    Home,
    Job,
    Pet,
    Food,
    Sport,
    Friend,
}

const FACTS: [Fact; 6] = [Fact::Home, Fact::Job, Fact::Pet, Fact::Food, Fact::Sport, Fact::Friend];

#[derive(Clone, Debug, PartialEq)]
pub struct StoryConfig {
    /// Probability that a story opens with an introduction sentence. Without
    /// it the first fact sits in the first sentence.
    pub intro_prob: f64,
    pub facts_per_story: usize,
    pub questions_per_story: usize,
    pub yes_no_prob: f64,
    /// Pack earlier turns on the same story as conversation history.
    pub history: bool,
}

impl Default for StoryConfig {
    fn default() -> Self {
        StoryConfig {
            intro_prob: 0.75,
            facts_per_story: 5,
            questions_per_story: 3,
            yes_no_prob: 0.4,
            history: true,
        }
    }
}

struct Person {
    name: &'static str,
    pronoun: &'static str,
    city: &'static str,
    job: &'static str,
    pet: &'static str,
    pet_color: &'static str,
    food: &'static str,
    sport: &'static str,
    friend: &'static str,
}

fn pick<R: Rng>(rng: &mut R, xs: &[&'static str]) -> &'static str {
    xs[rng.gen_range(0..xs.len())]
}

fn other<R: Rng>(rng: &mut R, xs: &[&'static str], not: &str) -> &'static str {
    loop {
        let x = pick(rng, xs);
        if x != not {
            return x;
        }
    }
}

fn names() -> Vec<&'static str> {
    NAMES.iter().map(|(m, _)| *m).collect()
}

impl Person {
    fn sentence(&self, fact: Fact) -> String {
        let (n, p) = (self.name, self.pronoun);
        match fact {
            Fact::Home => format!("{n} lives in {}.", self.city),
            Fact::Job => format!("{p} works as a {}.", self.job),
            Fact::Pet => format!("{p} has a {} {}.", self.pet_color, self.pet),
            Fact::Food => format!("{p} likes to eat {}.", self.food),
            Fact::Sport => format!("On weekends {} plays {}.", p.to_lowercase(), self.sport),
            Fact::Friend => format!("{n} has a friend named {}.", self.friend),
        }
    }
}

/// `(question, answer, answer type)` about one fact.
fn question<R: Rng>(rng: &mut R, person: &Person, fact: Fact, yes_no_prob: f64) -> (String, String, AnswerType) {
    let n = person.name;
    if rng.gen_bool(yes_no_prob) {
        let yes = rng.gen_bool(0.5);
        let mut val = |xs: &[&'static str], truth: &'static str| if yes { truth } else { other(rng, xs, truth) };
        let q = match fact {
            Fact::Home => format!("Does {n} live in {}?", val(&CITIES, person.city)),
            Fact::Job => format!("Is {n} a {}?", val(&JOBS, person.job)),
            Fact::Pet => format!("Does {n} have a {}?", val(&PETS, person.pet)),
            Fact::Food => format!("Does {n} like {}?", val(&FOODS, person.food)),
            Fact::Sport => format!("Does {n} play {}?", val(&SPORTS, person.sport)),
            Fact::Friend => format!("Is {} a friend of {n}?", val(&names(), person.friend)),
        };
        let t = if yes { AnswerType::Yes } else { AnswerType::No };
        return (q, t.as_str().to_string(), t);
    }
    let (q, a) = match fact {
        Fact::Home => (format!("Where does {n} live?"), person.city),
        Fact::Job => (format!("What is the job of {n}?"), person.job),
        Fact::Pet if rng.gen_bool(0.5) => (format!("What color is the pet of {n}?"), person.pet_color),
        Fact::Pet => (format!("What pet does {n} have?"), person.pet),
        Fact::Food => (format!("What does {n} like to eat?"), person.food),
        Fact::Sport => (format!("What does {n} play on weekends?"), person.sport),
        Fact::Friend => (format!("Who is the friend of {n}?"), person.friend),
    };
    (q, a.to_string(), AnswerType::Span)
}

/// Templated CoQA-style corpus of `n` questions over short stories about
/// one person each. Every question is answered by exactly one sentence,
/// which is its rationale. With `history` on, earlier turns on the same story
/// form the conversation history.
pub fn generate_story_corpus(n: usize, seed: u64, cfg: &StoryConfig) -> Result<Corpus> {
    if cfg.questions_per_story == 0 || cfg.facts_per_story == 0 || cfg.facts_per_story > FACTS.len() {
        return Err(Error::Config(format!(
            "facts per story must be 1..={} and questions per story at least 1",
            FACTS.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = names();
    let mut items = Vec::with_capacity(n);
    let mut story_no = 0;
    while items.len() < n {
        story_no += 1;
        let (name, pronoun) = NAMES[rng.gen_range(0..NAMES.len())];
        let person = Person {
            name,
            pronoun,
            city: pick(&mut rng, &CITIES),
            job: pick(&mut rng, &JOBS),
            pet: pick(&mut rng, &PETS),
            pet_color: pick(&mut rng, &COLORS),
            food: pick(&mut rng, &FOODS),
            sport: pick(&mut rng, &SPORTS),
            friend: other(&mut rng, &names, name),
        };
        let mut facts = FACTS.to_vec();
        facts.shuffle(&mut rng);
        facts.truncate(cfg.facts_per_story);

        let mut story = String::new();
        if rng.gen_bool(cfg.intro_prob) {
            story.push_str(&format!("This is a story about {name}."));
        }
        let mut spans = Vec::with_capacity(facts.len());
        for fact in &facts {
            if !story.is_empty() {
                story.push(' ');
            }
            let sentence = person.sentence(*fact);
            let start = story.chars().count();
            story.push_str(&sentence);
            spans.push(Span::new(start, start + sentence.chars().count()));
        }

        let mut asked: Vec<usize> = (0..facts.len()).collect();
        asked.shuffle(&mut rng);
        asked.truncate(cfg.questions_per_story);
        let mut history: Vec<(String, String)> = Vec::new();
        for (turn, &f) in asked.iter().enumerate() {
            if items.len() == n {
                break;
            }
            let (q, a, t) = question(&mut rng, &person, facts[f], cfg.yes_no_prob);
            debug_assert!(t != AnswerType::Span || find_chars(&story, &a).is_some());
            let item = QaItem::new(
                format!("st{story_no:05}-t{}", turn + 1),
                story.clone(),
                history.clone(),
                q.clone(),
                a.clone(),
                t,
                spans[f],
            );
            items.push(item);
            if !cfg.history {
                continue;
            }
            history.push((q, a));
            if history.len() > HISTORY_WINDOW {
                history.remove(0);
            }
        }
    }
    Corpus::new(items, SourceFormat::Coqa, Split::Train)
}
