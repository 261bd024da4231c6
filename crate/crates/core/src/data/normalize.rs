//! Text normalisation for vocalisation.
//!
//! Instructions are rewritten into plain speakable ASCII: letters, digits,
//! single spaces and the sentence punctuation `. , ? !`. LaTeX fragments and
//! symbols are expanded through a fixed rule table:
//!
//! | input | output |
//! |-------|--------|
//! | `$` `{` `}` `(` `)` `[` `]` quotes | removed |
//! | `x^2`, `x^{2}`, `²` | `x squared` |
//! | `x^3`, `³` | `x cubed` |
//! | `x^n` | `x to the power of n` |
//! | `x_i` | `x sub i` |
//! | `\frac{a}{b}` | `a over b` |
//! | `\sqrt{a}`, `√` | `square root of a` |
//! | `\text{a}` (also `mathrm`, `mathbf`, ...) | `a` |
//! | `\times` `\cdot` `×` `*` | `times` |
//! | `\div` `÷` | `divided by` |
//! | `\pm` `±` | `plus or minus` |
//! | `\geq` `\ge` `≥` / `\leq` `\le` `≤` | `greater/less than or equal to` |
//! | `\neq` `≠` / `\approx` `≈` `~` | `not equal to` / `approximately` |
//! | `\infty` `∞` | `infinity` |
//! | `^\circ` `\degree` `°` | `degrees` |
//! | Greek commands and letters (`\pi`, `π`, ...) | the letter name |
//! | `%` `\%` | `percent` |
//! | `&` `\&` | `and` |
//! | `+` `=` `<` `>` `/` `#` `@` | `plus` `equals` `less than` `greater than` `over` `number` `at` |
//! | `-` before a digit (not after a letter) | `minus`, otherwise a space |
//! | `.` between digits | `point` |
//! | `,` between digits | removed |
//! | `:` `;` | `,` |
//! | `…` | `.` |
//! | apostrophe between letters | removed (`it's` becomes `its`) |
//!
//! Anything else that is not ASCII alphanumeric is dropped and counted in
//! [`Normalized::dropped`]. After expansion, whitespace collapses to single
//! spaces, punctuation attaches to the preceding word, and runs of
//! punctuation keep only their first mark. The result is a fixed point of
//! [`normalize_text`].

/// Output of [`normalize_text`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    /// Number of unknown symbols or commands that were dropped.
    pub dropped: usize,
}

pub fn normalize_text(raw: &str) -> Normalized {
    let chars: Vec<char> = raw.chars().collect();
    let mut expander = Expander {
        chars: &chars,
        pos: 0,
        dropped: 0,
    };
    let mut expanded = String::with_capacity(raw.len() + 16);
    expander.expand_until(&mut expanded, None);
    Normalized {
        text: canonicalize(&expanded),
        dropped: expander.dropped,
    }
}

fn greek_name(cmd: &str) -> Option<&'static str> {
    const GREEK: &[&str] = &[
        "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
        "lambda", "mu", "nu", "xi", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi",
        "omega",
    ];
    let lower = cmd.to_ascii_lowercase();
    let lower = lower.strip_prefix("var").unwrap_or(&lower);
    GREEK.iter().copied().find(|g| *g == lower)
}

fn greek_letter(c: char) -> Option<&'static str> {
    Some(match c {
        'α' | 'Α' => "alpha",
        'β' | 'Β' => "beta",
        'γ' | 'Γ' => "gamma",
        'δ' | 'Δ' => "delta",
        'ε' => "epsilon",
        'θ' | 'Θ' => "theta",
        'λ' | 'Λ' => "lambda",
        'μ' => "mu",
        'π' | 'Π' => "pi",
        'ρ' => "rho",
        'σ' | 'Σ' => "sigma",
        'τ' => "tau",
        'φ' | 'Φ' => "phi",
        'ω' | 'Ω' => "omega",
        _ => return None,
    })
}

/// Symbols with a fixed spoken form.
fn symbol_words(c: char) -> Option<&'static str> {
    Some(match c {
        '%' => " percent ",
        '&' => " and ",
        '+' => " plus ",
        '=' => " equals ",
        '<' => " less than ",
        '>' => " greater than ",
        '*' | '×' => " times ",
        '/' => " over ",
        '#' => " number ",
        '@' => " at ",
        '~' | '≈' => " approximately ",
        '÷' => " divided by ",
        '±' => " plus or minus ",
        '≥' => " greater than or equal to ",
        '≤' => " less than or equal to ",
        '≠' => " not equal to ",
        '∞' => " infinity ",
        '°' => " degrees ",
        '²' => " squared ",
        '³' => " cubed ",
        '√' => " square root of ",
        '…' => ". ",
        ':' | ';' => ", ",
        _ => return None,
    })
}

/// Characters that carry no spoken content and vanish without a warning.
fn is_silent(c: char) -> bool {
    matches!(
        c,
        '$' | '{' | '}' | '(' | ')' | '[' | ']' | '"' | '\'' | '`' | '|' | '“' | '”' | '‘'
            | '’' | '–' | '—' | '_' | '^' | '\\'
    )
}

struct Expander<'a> {
    chars: &'a [char],
    pos: usize,
    dropped: usize,
}

impl Expander<'_> {
    fn peek(&self, offset: isize) -> Option<char> {
        let i = self.pos as isize + offset;
        (i >= 0).then(|| self.chars.get(i as usize).copied()).flatten()
    }

    /// Expands characters until `stop` (consumed) or end of input.
    fn expand_until(&mut self, out: &mut String, stop: Option<char>) {
        while let Some(c) = self.peek(0) {
            if Some(c) == stop {
                self.pos += 1;
                return;
            }
            self.expand_one(out);
        }
    }

    /// Reads a raw argument: a `{...}` group, a `\command`, or one character.
    fn raw_argument(&mut self) -> String {
        while self.peek(0) == Some(' ') {
            self.pos += 1;
        }
        match self.peek(0) {
            None => String::new(),
            Some('{') => {
                self.pos += 1;
                let start = self.pos;
                let mut depth = 1;
                while let Some(c) = self.peek(0) {
                    self.pos += 1;
                    match c {
                        '{' => depth += 1,
                        '}' => {
                            depth -= 1;
                            if depth == 0 {
                                return self.chars[start..self.pos - 1].iter().collect();
                            }
                        }
                        _ => {}
                    }
                }
                self.chars[start..].iter().collect()
            }
            Some('\\') => {
                let start = self.pos;
                self.pos += 1;
                while self.peek(0).is_some_and(|c| c.is_ascii_alphabetic()) {
                    self.pos += 1;
                }
                if self.pos == start + 1 && self.peek(0).is_some() {
                    self.pos += 1;
                }
                self.chars[start..self.pos].iter().collect()
            }
            Some(c) => {
                self.pos += 1;
                c.to_string()
            }
        }
    }

    fn expand_str(&mut self, raw: &str) -> String {
        let inner = normalize_fragment(raw);
        self.dropped += inner.dropped;
        inner.text
    }

    fn expand_argument(&mut self) -> String {
        let raw = self.raw_argument();
        self.expand_str(&raw)
    }

    fn command(&mut self, out: &mut String) {
        // self.pos is just past the backslash
        let start = self.pos;
        while self.peek(0).is_some_and(|c| c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        if name.is_empty() {
            // control symbol such as \% or \,
            match self.peek(0) {
                Some('%') => out.push_str(" percent "),
                Some('&') => out.push_str(" and "),
                Some(_) => out.push(' '),
                None => {}
            }
            if self.peek(0).is_some() {
                self.pos += 1;
            }
            return;
        }
        match name.as_str() {
            "frac" | "dfrac" | "tfrac" => {
                let num = self.expand_argument();
                let den = self.expand_argument();
                out.push_str(&format!(" {num} over {den} "));
            }
            "sqrt" => {
                let arg = self.expand_argument();
                out.push_str(&format!(" square root of {arg} "));
            }
            "text" | "mathrm" | "mathbf" | "mathit" | "textbf" | "textit" | "emph"
            | "operatorname" | "mbox" => {
                let arg = self.expand_argument();
                out.push_str(&format!(" {arg} "));
            }
            "left" | "right" | "big" | "Big" | "bigg" | "Bigg" | "displaystyle" | "quad"
            | "qquad" | "cdots" | "ldots" | "dots" => out.push(' '),
            "times" | "cdot" => out.push_str(" times "),
            "div" => out.push_str(" divided by "),
            "pm" => out.push_str(" plus or minus "),
            "geq" | "ge" => out.push_str(" greater than or equal to "),
            "leq" | "le" => out.push_str(" less than or equal to "),
            "neq" | "ne" => out.push_str(" not equal to "),
            "approx" | "sim" => out.push_str(" approximately "),
            "infty" => out.push_str(" infinity "),
            "circ" | "degree" => out.push_str(" degrees "),
            "to" | "rightarrow" => out.push_str(" to "),
            "sum" => out.push_str(" sum "),
            "int" => out.push_str(" integral "),
            "angle" => out.push_str(" angle "),
            other => match greek_name(other) {
                Some(g) => {
                    out.push(' ');
                    out.push_str(g);
                    out.push(' ');
                }
                None => {
                    self.dropped += 1;
                    out.push(' ');
                }
            },
        }
    }

    fn expand_one(&mut self, out: &mut String) {
        let c = self.chars[self.pos];
        let prev = self.peek(-1);
        let next = self.peek(1);
        self.pos += 1;
        match c {
            '\\' => self.command(out),
            '^' => {
                let raw = self.raw_argument();
                let trimmed = raw.trim();
                match trimmed {
                    "2" => out.push_str(" squared "),
                    "3" => out.push_str(" cubed "),
                    "\\circ" => out.push_str(" degrees "),
                    "" => out.push(' '),
                    _ => {
                        let power = self.expand_str(trimmed);
                        out.push_str(&format!(" to the power of {power} "));
                    }
                }
            }
            '_' => {
                let sub = self.expand_argument();
                out.push_str(&format!(" sub {sub} "));
            }
            '-' => {
                let after_letter = prev.is_some_and(|p| p.is_ascii_alphabetic());
                if next.is_some_and(|n| n.is_ascii_digit()) && !after_letter {
                    out.push_str(" minus ");
                } else {
                    out.push(' ');
                }
            }
            '.' if prev.is_some_and(|p| p.is_ascii_digit())
                && next.is_some_and(|n| n.is_ascii_digit()) =>
            {
                out.push_str(" point ");
            }
            ',' if prev.is_some_and(|p| p.is_ascii_digit())
                && next.is_some_and(|n| n.is_ascii_digit()) => {}
            '\'' | '’'
                if prev.is_some_and(|p| p.is_ascii_alphabetic())
                    && next.is_some_and(|n| n.is_ascii_alphabetic()) => {}
            '.' | ',' | '?' | '!' => out.push(c),
            c if c.is_ascii_alphanumeric() => out.push(c),
            c if c.is_whitespace() => out.push(' '),
            c => {
                if let Some(words) = symbol_words(c) {
                    out.push_str(words);
                } else if let Some(g) = greek_letter(c) {
                    out.push(' ');
                    out.push_str(g);
                    out.push(' ');
                } else if is_silent(c) {
                    out.push(' ');
                } else {
                    self.dropped += 1;
                    out.push(' ');
                }
            }
        }
    }
}

/// Expands a nested fragment (command argument) and canonicalises it.
fn normalize_fragment(raw: &str) -> Normalized {
    normalize_text(raw)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Last {
    Start,
    Word,
    Gap,
    Punct,
}

/// Collapses whitespace and punctuation runs in already-expanded text.
fn canonicalize(expanded: &str) -> String {
    let mut out = String::with_capacity(expanded.len());
    let mut last = Last::Start;
    for c in expanded.chars() {
        match c {
            c if c.is_ascii_alphanumeric() => {
                if matches!(last, Last::Gap | Last::Punct) {
                    out.push(' ');
                }
                out.push(c);
                last = Last::Word;
            }
            '.' | ',' | '?' | '!' => {
                if matches!(last, Last::Word | Last::Gap) {
                    out.push(c);
                    last = Last::Punct;
                }
            }
            _ => {
                if last == Last::Word {
                    last = Last::Gap;
                }
            }
        }
    }
    out
}
