//! Synthetic skill-structured corpus.
//!
//! Each problem has a reference template plus a list of skill-tagged bugs
//! (textual rewrites). A simulated student has a latent mastery per skill that
//! grows with practice and a fixed naming style. A submission is the template
//! in the student's style with a subset of bugs applied, and its labels come
//! from actually running it.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value as Json};

use crate::data::{DataError, Dataset, Interaction, Outcomes, Problem, TestCase, Visibility};
use crate::executor::{evaluate_submission, ExecError, MiniLangBackend};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("reference solution of `{problem}` failed: {message}")]
    Reference { problem: String, message: String },
    #[error("requested {requested} problems, only {available} exist")]
    TooManyProblems { requested: usize, available: usize },
    #[error("cannot reach {target} submissions from {base} first attempts")]
    Count { target: usize, base: usize },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Skill {
    Loops,
    Conditionals,
    Arithmetic,
    Strings,
    Arrays,
    Logic,
}

const SKILLS: [Skill; 6] =
    [Skill::Loops, Skill::Conditionals, Skill::Arithmetic, Skill::Strings, Skill::Arrays, Skill::Logic];

struct Bug {
    skill: Skill,
    from: &'static str,
    to: &'static str,
}

struct Spec {
    id: &'static str,
    statement: &'static str,
    signature: &'static str,
    template: &'static str,
    inputs: fn() -> Vec<Vec<Json>>,
    bugs: Vec<Bug>,
    difficulty: f64,
}

const fn bug(skill: Skill, from: &'static str, to: &'static str) -> Bug {
    Bug { skill, from, to }
}

use Skill::*;

fn specs() -> Vec<Spec> {
    vec![
        Spec {
            id: "sum_to",
            statement: "Return the sum of the integers from 1 to n. Return 0 when n is less than 1.",
            signature: "fn sum_to(n: int) -> int",
            template: "fn sum_to(n: int) -> int {\n    let {r} = 0;\n    let {i} = 1;\n    while ({i} <= n) {\n        {r} = {r} + {i};\n        {i} = {i} + 1;\n    }\n    return {r};\n}\n",
            inputs: || [0, 1, 2, 3, 5, 10, -1, 7].iter().map(|n| vec![json!(n)]).collect(),
            bugs: vec![
                bug(Loops, "{i} <= n", "{i} < n"),
                bug(Arithmetic, "let {r} = 0;", "let {r} = 1;"),
                bug(Loops, "let {i} = 1;", "let {i} = 2;"),
            ],
            difficulty: -0.6,
        },
        Spec {
            id: "count_evens",
            statement: "Return the number of even integers in the array.",
            signature: "fn count_evens(xs: [int]) -> int",
            template: "fn count_evens(xs: [int]) -> int {\n    let {r} = 0;\n    let {i} = 0;\n    while ({i} < len(xs)) {\n        if (xs[{i}] % 2 == 0) {\n            {r} = {r} + 1;\n        }\n        {i} = {i} + 1;\n    }\n    return {r};\n}\n",
            inputs: || {
                vec![
                    vec![json!([2, 1, 2, 3, 4])],
                    vec![json!([2, 2, 0])],
                    vec![json!([1, 3, 5])],
                    vec![json!([])],
                    vec![json!([11, 9, 0, 1])],
                    vec![json!([4])],
                    vec![json!([1, 2])],
                    vec![json!([7, 6, 5, 8])],
                ]
            },
            bugs: vec![
                bug(Conditionals, "% 2 == 0", "% 2 == 1"),
                bug(Loops, "let {i} = 0;", "let {i} = 1;"),
                bug(Arrays, "{i} < len(xs)", "{i} < len(xs) - 1"),
            ],
            difficulty: -0.3,
        },
        Spec {
            id: "max_of_three",
            statement: "Return the largest of the three integers a, b and c.",
            signature: "fn max_of_three(a: int, b: int, c: int) -> int",
            template: "fn max_of_three(a: int, b: int, c: int) -> int {\n    let {r} = a;\n    if (b > {r}) {\n        {r} = b;\n    }\n    if (c > {r}) {\n        {r} = c;\n    }\n    return {r};\n}\n",
            inputs: || {
                [[1, 2, 3], [3, 2, 1], [2, 3, 1], [5, 5, 5], [-1, -5, -3], [-7, -2, -9], [0, 9, 4], [8, 1, 6]]
                    .iter()
                    .map(|t| t.iter().map(|x| json!(x)).collect())
                    .collect()
            },
            bugs: vec![
                bug(Conditionals, "if (c > {r})", "if (c > a)"),
                bug(Arithmetic, "let {r} = a;", "let {r} = 0;"),
                bug(Logic, "b > {r}", "b < {r}"),
            ],
            difficulty: -0.4,
        },
        Spec {
            id: "is_leap_year",
            statement: "Return true when the year is a leap year: divisible by 4, except centuries, which must be divisible by 400.",
            signature: "fn is_leap_year(y: int) -> bool",
            template: "fn is_leap_year(y: int) -> bool {\n    let {r} = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;\n    return {r};\n}\n",
            inputs: || [2000, 1900, 2024, 2023, 2100, 1600, 1996, 2002].iter().map(|n| vec![json!(n)]).collect(),
            bugs: vec![
                bug(Logic, " || y % 400 == 0", ""),
                bug(Logic, " && y % 100 != 0", ""),
                bug(Arithmetic, "y % 4 == 0", "y % 2 == 0"),
            ],
            difficulty: 0.3,
        },
        Spec {
            id: "reverse_string",
            statement: "Return the string with its characters in reverse order.",
            signature: "fn reverse_string(s: string) -> string",
            template: "fn reverse_string(s: string) -> string {\n    let {r} = \"\";\n    let {i} = len(s) - 1;\n    while ({i} >= 0) {\n        {r} = {r} + char_at(s, {i});\n        {i} = {i} - 1;\n    }\n    return {r};\n}\n",
            inputs: || ["", "a", "ab", "abc", "racecar", "hello", "xy z", "noon"].iter().map(|s| vec![json!(s)]).collect(),
            bugs: vec![
                bug(Loops, "{i} >= 0", "{i} > 0"),
                bug(Strings, "{r} + char_at(s, {i})", "char_at(s, {i}) + {r}"),
                bug(Loops, "let {i} = len(s) - 1;", "let {i} = len(s) - 2;"),
            ],
            difficulty: 0.2,
        },
        Spec {
            id: "fizz_buzz",
            statement: "Return \"FizzBuzz\" for multiples of 15, \"Fizz\" for other multiples of 3, \"Buzz\" for other multiples of 5, and the number as text otherwise.",
            signature: "fn fizz_buzz(n: int) -> string",
            template: "fn fizz_buzz(n: int) -> string {\n    let {r} = to_string(n);\n    if (n % 15 == 0) {\n        {r} = \"FizzBuzz\";\n    } else if (n % 3 == 0) {\n        {r} = \"Fizz\";\n    } else if (n % 5 == 0) {\n        {r} = \"Buzz\";\n    }\n    return {r};\n}\n",
            inputs: || [15, 3, 5, 7, 30, 9, 10, 1].iter().map(|n| vec![json!(n)]).collect(),
            bugs: vec![
                bug(Conditionals, "n % 15 == 0", "n % 10 == 0"),
                bug(Strings, "\"Buzz\";", "\"buzz\";"),
                bug(Conditionals, "} else if (n % 5 == 0) {", "}\n    if (n % 5 == 0) {"),
            ],
            difficulty: 0.0,
        },
        Spec {
            id: "count_char",
            statement: "Return how many times the one-character string c occurs in s.",
            signature: "fn count_char(s: string, c: string) -> int",
            template: "fn count_char(s: string, c: string) -> int {\n    let {r} = 0;\n    let {i} = 0;\n    while ({i} < len(s)) {\n        if (char_at(s, {i}) == c) {\n            {r} = {r} + 1;\n        }\n        {i} = {i} + 1;\n    }\n    return {r};\n}\n",
            inputs: || {
                [("banana", "a"), ("banana", "b"), ("", "x"), ("aaa", "a"), ("abcabc", "c"), ("hello", "z"), ("xyx", "x"), ("mississippi", "s")]
                    .iter()
                    .map(|(s, c)| vec![json!(s), json!(c)])
                    .collect()
            },
            bugs: vec![
                bug(Loops, "{i} = {i} + 1;", "{i} = {i} + 2;"),
                bug(Loops, "let {i} = 0;", "let {i} = 1;"),
                bug(Arithmetic, "{r} = {r} + 1;", "{r} = 1;"),
            ],
            difficulty: 0.1,
        },
        Spec {
            id: "same_ends",
            statement: "Return true when the array is non-empty and its first and last elements are equal.",
            signature: "fn same_ends(xs: [int]) -> bool",
            template: "fn same_ends(xs: [int]) -> bool {\n    let {r} = false;\n    if (len(xs) >= 1) {\n        {r} = xs[0] == xs[len(xs) - 1];\n    }\n    return {r};\n}\n",
            inputs: || {
                vec![
                    vec![json!([1, 2, 1])],
                    vec![json!([1, 2, 3])],
                    vec![json!([])],
                    vec![json!([7])],
                    vec![json!([4, 4])],
                    vec![json!([5, 1, 2, 5])],
                    vec![json!([0, 1])],
                    vec![json!([9, 9, 8])],
                ]
            },
            bugs: vec![
                bug(Arrays, "len(xs) >= 1", "len(xs) >= 0"),
                bug(Arrays, "xs[len(xs) - 1]", "xs[1]"),
                bug(Logic, "let {r} = false;", "let {r} = true;"),
            ],
            difficulty: 0.2,
        },
        Spec {
            id: "factorial",
            statement: "Return n factorial, the product of the integers from 1 to n. The factorial of 0 is 1.",
            signature: "fn factorial(n: int) -> int",
            template: "fn factorial(n: int) -> int {\n    let {r} = 1;\n    let {i} = 2;\n    while ({i} <= n) {\n        {r} = {r} * {i};\n        {i} = {i} + 1;\n    }\n    return {r};\n}\n",
            inputs: || [0, 1, 2, 3, 4, 5, 6, 10].iter().map(|n| vec![json!(n)]).collect(),
            bugs: vec![
                bug(Loops, "{i} <= n", "{i} < n"),
                bug(Arithmetic, "let {r} = 1;", "let {r} = 0;"),
                bug(Arithmetic, "{r} * {i}", "{r} + {i}"),
            ],
            difficulty: -0.2,
        },
        Spec {
            id: "caught_speeding",
            statement: "Return the ticket level for a speed: 0 up to 60, 1 up to 80, 2 above. On a birthday every limit is 5 higher.",
            signature: "fn caught_speeding(speed: int, birthday: bool) -> int",
            template: "fn caught_speeding(speed: int, birthday: bool) -> int {\n    let {r} = speed;\n    if (birthday) {\n        {r} = speed - 5;\n    }\n    if ({r} <= 60) {\n        return 0;\n    } else if ({r} <= 80) {\n        return 1;\n    }\n    return 2;\n}\n",
            inputs: || {
                [(60, false), (65, false), (65, true), (80, false), (85, true), (86, true), (90, false), (50, true)]
                    .iter()
                    .map(|(s, b)| vec![json!(s), json!(b)])
                    .collect()
            },
            bugs: vec![
                bug(Logic, "if (birthday)", "if (!birthday)"),
                bug(Conditionals, "{r} <= 60", "{r} < 60"),
                bug(Conditionals, "{r} <= 80", "{r} < 80"),
            ],
            difficulty: 0.4,
        },
        Spec {
            id: "double_char",
            statement: "Return the string with every character repeated twice.",
            signature: "fn double_char(s: string) -> string",
            template: "fn double_char(s: string) -> string {\n    let {r} = \"\";\n    let {i} = 0;\n    while ({i} < len(s)) {\n        let ch = char_at(s, {i});\n        {r} = {r} + ch + ch;\n        {i} = {i} + 1;\n    }\n    return {r};\n}\n",
            inputs: || ["The", "AAbb", "Hi-There", "", "a", "xyz", "  ", "ok!"].iter().map(|s| vec![json!(s)]).collect(),
            bugs: vec![
                bug(Strings, "{r} + ch + ch", "{r} + ch"),
                bug(Loops, "{i} < len(s)", "{i} < len(s) - 1"),
                bug(Strings, "let {r} = \"\";", "let {r} = \" \";"),
            ],
            difficulty: 0.0,
        },
        Spec {
            id: "has_22",
            statement: "Return true when the array contains a 2 immediately followed by another 2.",
            signature: "fn has_22(xs: [int]) -> bool",
            template: "fn has_22(xs: [int]) -> bool {\n    let {i} = 0;\n    while ({i} + 1 < len(xs)) {\n        if (xs[{i}] == 2 && xs[{i} + 1] == 2) {\n            return true;\n        }\n        {i} = {i} + 1;\n    }\n    return false;\n}\n",
            inputs: || {
                vec![
                    vec![json!([1, 2, 2])],
                    vec![json!([1, 2, 1, 2])],
                    vec![json!([2, 1, 2])],
                    vec![json!([2, 2, 1])],
                    vec![json!([])],
                    vec![json!([2])],
                    vec![json!([3, 4, 2])],
                    vec![json!([1, 1, 1])],
                ]
            },
            bugs: vec![
                bug(Logic, "&& xs[{i} + 1] == 2", "|| xs[{i} + 1] == 2"),
                bug(Arrays, "{i} + 1 < len(xs)", "{i} < len(xs)"),
                bug(Loops, "let {i} = 0;", "let {i} = 1;"),
            ],
            difficulty: 0.5,
        },
        Spec {
            id: "digit_sum",
            statement: "Return the sum of the decimal digits of n, ignoring its sign.",
            signature: "fn digit_sum(n: int) -> int",
            template: "fn digit_sum(n: int) -> int {\n    let {r} = 0;\n    let m = abs(n);\n    while (m > 0) {\n        {r} = {r} + m % 10;\n        m = m / 10;\n    }\n    return {r};\n}\n",
            inputs: || [123, 0, 9, -45, 1000, 5050, -7, 99].iter().map(|n| vec![json!(n)]).collect(),
            bugs: vec![
                bug(Arithmetic, "{r} + m % 10", "{r} + 1"),
                bug(Arithmetic, "let m = abs(n);", "let m = n;"),
                bug(Arithmetic, "m = m / 10;", "m = m / 100;"),
            ],
            difficulty: 0.4,
        },
        Spec {
            id: "count_vowels",
            statement: "Return the number of vowels in s, counting both lower and upper case.",
            signature: "fn count_vowels(s: string) -> int",
            template: "fn count_vowels(s: string) -> int {\n    let {r} = 0;\n    let {i} = 0;\n    while ({i} < len(s)) {\n        if (contains(\"aeiouAEIOU\", char_at(s, {i}))) {\n            {r} = {r} + 1;\n        }\n        {i} = {i} + 1;\n    }\n    return {r};\n}\n",
            inputs: || ["hello", "AEIOU", "", "rhythm", "Apple", "banana", "xyz", "Education"].iter().map(|s| vec![json!(s)]).collect(),
            bugs: vec![
                bug(Strings, "\"aeiouAEIOU\"", "\"aeiou\""),
                bug(Loops, "let {i} = 0;", "let {i} = 1;"),
                bug(Arithmetic, "{r} = {r} + 1;", "{r} = {r} + 2;"),
            ],
            difficulty: 0.1,
        },
        Spec {
            id: "is_sorted",
            statement: "Return true when the array is in non-decreasing order.",
            signature: "fn is_sorted(xs: [int]) -> bool",
            template: "fn is_sorted(xs: [int]) -> bool {\n    let {i} = 1;\n    while ({i} < len(xs)) {\n        if (xs[{i}] < xs[{i} - 1]) {\n            return false;\n        }\n        {i} = {i} + 1;\n    }\n    return true;\n}\n",
            inputs: || {
                vec![
                    vec![json!([1, 2, 3])],
                    vec![json!([3, 2, 1])],
                    vec![json!([1, 1, 2])],
                    vec![json!([])],
                    vec![json!([5])],
                    vec![json!([2, 1, 3])],
                    vec![json!([1, 3, 2])],
                    vec![json!([4, 4, 4])],
                ]
            },
            bugs: vec![
                bug(Conditionals, "xs[{i}] < xs[{i} - 1]", "xs[{i}] <= xs[{i} - 1]"),
                bug(Loops, "let {i} = 1;", "let {i} = 2;"),
                bug(Logic, "return true;", "return len(xs) > 1;"),
            ],
            difficulty: 0.3,
        },
        Spec {
            id: "string_times",
            statement: "Return n copies of the string s joined together.",
            signature: "fn string_times(s: string, n: int) -> string",
            template: "fn string_times(s: string, n: int) -> string {\n    let {r} = \"\";\n    let {i} = 0;\n    while ({i} < n) {\n        {r} = {r} + s;\n        {i} = {i} + 1;\n    }\n    return {r};\n}\n",
            inputs: || {
                [("Hi", 2), ("Hi", 3), ("Hi", 1), ("Hi", 0), ("", 4), ("Oh Boy!", 2), ("x", 5), ("ab", 1)]
                    .iter()
                    .map(|(s, n)| vec![json!(s), json!(n)])
                    .collect()
            },
            bugs: vec![
                bug(Loops, "{i} < n", "{i} <= n"),
                bug(Loops, "let {i} = 0;", "let {i} = 1;"),
                bug(Strings, "{r} = {r} + s;", "{r} = s;"),
            ],
            difficulty: -0.1,
        },
        Spec {
            id: "big_diff",
            statement: "Return the difference between the largest and smallest values of a non-empty array.",
            signature: "fn big_diff(xs: [int]) -> int",
            template: "fn big_diff(xs: [int]) -> int {\n    let hi = xs[0];\n    let lo = xs[0];\n    let {i} = 1;\n    while ({i} < len(xs)) {\n        hi = max(hi, xs[{i}]);\n        lo = min(lo, xs[{i}]);\n        {i} = {i} + 1;\n    }\n    return hi - lo;\n}\n",
            inputs: || {
                vec![
                    vec![json!([10, 3, 5, 6])],
                    vec![json!([7, 2, 10, 9])],
                    vec![json!([2, 10, 7, 2])],
                    vec![json!([5])],
                    vec![json!([1, 1, 1])],
                    vec![json!([-3, 4])],
                    vec![json!([8, 6])],
                    vec![json!([0, 2, 9, 1])],
                ]
            },
            bugs: vec![
                bug(Arithmetic, "return hi - lo;", "return hi;"),
                bug(Arrays, "{i} < len(xs)", "{i} < len(xs) - 1"),
                bug(Arrays, "let lo = xs[0];", "let lo = 0;"),
            ],
            difficulty: 0.2,
        },
    ]
}

pub const RESULT_NAMES: [&str; 6] = ["result", "res", "total", "ans", "out", "acc"];
pub const INDEX_NAMES: [&str; 5] = ["i", "idx", "k", "j", "pos"];

/// A student's naming habits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Style {
    pub result: usize,
    pub index: usize,
}

fn render(template: &str, style: Style) -> String {
    template.replace("{r}", RESULT_NAMES[style.result]).replace("{i}", INDEX_NAMES[style.index])
}

/// Number of problems available to the generator.
pub fn num_problems() -> usize {
    specs().len()
}

/// The reference solution of problem `id` in the default style.
pub fn reference_code(id: &str) -> Option<String> {
    specs().into_iter().find(|s| s.id == id).map(|s| render(s.template, Style { result: 0, index: 0 }))
}

/// Problems with expected outputs computed by running the references.
pub fn problems(n: usize) -> Result<BTreeMap<String, Problem>, SynthError> {
    let all = specs();
    if n > all.len() {
        return Err(SynthError::TooManyProblems { requested: n, available: all.len() });
    }
    let mut out = BTreeMap::new();
    for spec in all.into_iter().take(n) {
        let reference = render(spec.template, Style { result: 0, index: 0 });
        let err = |message: String| SynthError::Reference { problem: spec.id.into(), message };
        let sig = minilang::parse_signature(spec.signature).map_err(|d| err(d.to_string()))?;
        let unit = minilang::compile(&reference, &sig).map_err(|d| err(d.to_string()))?;
        let mut tests = Vec::new();
        for (k, input) in (spec.inputs)().into_iter().enumerate() {
            let args = input
                .iter()
                .zip(&sig.params)
                .map(|(v, p)| minilang::Value::from_json(v, &p.ty))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            let value = unit.run(args, minilang::Limits::default()).map_err(|e| err(e.to_string()))?;
            tests.push(TestCase {
                input,
                expected_output: value.to_json(),
                // the first three tests are shown to students
                visibility: if k < 3 { Visibility::Public } else { Visibility::Hidden },
            });
        }
        out.insert(
            spec.id.to_string(),
            Problem {
                problem_id: spec.id.into(),
                statement: spec.statement.into(),
                entry_signature: spec.signature.into(),
                tests,
                reference_solution: Some(reference),
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub problems: usize,
    pub students: usize,
    /// Total submissions including retries; `None` keeps first attempts only.
    pub submissions: Option<usize>,
    /// Inclusive range of problems each student attempts.
    pub problems_per_student: (usize, usize),
    pub seed: u64,
    /// Probability of a submission with a syntax error, scaled down by ability.
    pub syntax_error_rate: f64,
}

impl SynthConfig {
    /// Counts matching the 17-problem reference corpus shape.
    pub fn full(seed: u64) -> Self {
        SynthConfig {
            problems: 17,
            students: 246,
            submissions: Some(3714),
            problems_per_student: (9, 17),
            seed,
            syntax_error_rate: 0.08,
        }
    }

    /// 10 problems, 200 students, one attempt each: 2000 interactions.
    pub fn desk(seed: u64) -> Self {
        SynthConfig {
            problems: 10,
            students: 200,
            submissions: None,
            problems_per_student: (10, 10),
            seed,
            syntax_error_rate: 0.05,
        }
    }

    /// One student solving eight problems.
    pub fn tiny(seed: u64) -> Self {
        SynthConfig {
            problems: 8,
            students: 1,
            submissions: None,
            problems_per_student: (8, 8),
            seed,
            syntax_error_rate: 0.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Student {
    id: String,
    mastery: BTreeMap<Skill, f64>,
    ability: f64,
    style: Style,
}

impl Student {
    fn write(&self, spec: &Spec, rng: &mut ChaCha8Rng, syntax_error_rate: f64) -> String {
        let mut code = spec.template.to_string();
        for b in &spec.bugs {
            let p = sigmoid(-1.2 + spec.difficulty - 1.3 * self.mastery[&b.skill]);
            if rng.random_bool(p) && code.contains(b.from) {
                code = code.replacen(b.from, b.to, 1);
            }
        }
        let mut code = render(&code, self.style);
        if syntax_error_rate > 0.0 && rng.random_bool(syntax_error_rate * sigmoid(-self.ability) * 2.0) {
            // a dropped semicolon
            if let Some(at) = code.find(";\n") {
                code.remove(at);
            }
        }
        code
    }

    fn practice(&mut self, spec: &Spec, gain: f64) {
        let skills: Vec<Skill> = spec.bugs.iter().map(|b| b.skill).collect();
        for s in skills {
            *self.mastery.get_mut(&s).expect("all skills present") += gain / 3.0;
        }
    }
}

/// Generates and grades a corpus.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    let problems = problems(cfg.problems)?;
    let all = specs();
    let specs: Vec<&Spec> = all.iter().take(cfg.problems).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // plan: per student, an ordered list of problem indices with attempt counts
    let mut plan: Vec<Vec<(usize, usize)>> = Vec::with_capacity(cfg.students);
    for _ in 0..cfg.students {
        let (lo, hi) = cfg.problems_per_student;
        let n = rng.random_range(lo.min(cfg.problems)..=hi.min(cfg.problems));
        let mut order: Vec<usize> = (0..cfg.problems).collect();
        for k in 1..order.len() {
            if rng.random_bool(0.3) {
                order.swap(k - 1, k);
            }
        }
        let mut chosen: Vec<usize> = order.clone();
        chosen.shuffle(&mut rng);
        chosen.truncate(n);
        order.retain(|p| chosen.contains(p));
        plan.push(order.into_iter().map(|p| (p, 1)).collect());
    }
    let base: usize = plan.iter().map(Vec::len).sum();
    if let Some(target) = cfg.submissions {
        if target < base {
            return Err(SynthError::Count { target, base });
        }
        let mut extra = target - base;
        while extra > 0 {
            let s = rng.random_range(0..plan.len());
            if plan[s].is_empty() {
                continue;
            }
            let k = rng.random_range(0..plan[s].len());
            if plan[s][k].1 < 4 {
                plan[s][k].1 += 1;
                extra -= 1;
            }
        }
    }

    let backend = MiniLangBackend::default();
    let mut cache: HashMap<(usize, String), Outcomes> = HashMap::new();
    let mut interactions = Vec::with_capacity(cfg.submissions.unwrap_or(base));
    let width = cfg.students.to_string().len().max(3);
    for (s, items) in plan.into_iter().enumerate() {
        let ability = normal.sample(&mut rng);
        let mut student = Student {
            id: format!("s{:0width$}", s + 1),
            mastery: SKILLS.iter().map(|&k| (k, ability + 0.6 * normal.sample(&mut rng))).collect(),
            ability,
            style: Style { result: rng.random_range(0..RESULT_NAMES.len()), index: rng.random_range(0..INDEX_NAMES.len()) },
        };
        let mut t = 0i64;
        for (p, attempts) in items {
            for a in 1..=attempts {
                let spec = specs[p];
                let code = student.write(spec, &mut rng, cfg.syntax_error_rate);
                let outcomes = match cache.get(&(p, code.clone())) {
                    Some(o) => o.clone(),
                    None => {
                        let o = evaluate_submission(&code, &problems[spec.id], &backend, 5.0)?.outcomes();
                        cache.insert((p, code.clone()), o.clone());
                        o
                    }
                };
                t += 1;
                interactions.push(Interaction {
                    student_id: student.id.clone(),
                    problem_id: spec.id.into(),
                    timestamp: t,
                    attempt_index: a as u32,
                    code,
                    outcomes: Some(outcomes),
                });
                student.practice(spec, if a == 1 { 0.35 } else { 0.2 });
            }
        }
    }
    Ok(Dataset::from_parts(problems, interactions, format!("synthetic seed={}", cfg.seed))?)
}
