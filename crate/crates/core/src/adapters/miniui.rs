//! MiniUI: a tiny declarative UI language used as the in-repo reference
//! compiler and renderer.
//!
//! ```text
//! program := "Screen" "{" node* "}"
//! node    := ("VStack" | "HStack" | "List") "{" node* "}"
//!          | ("Text" | "Button" | "Image") STRING
//!          | "Spacer"
//! STRING  := '"' ( [^"\\\n] | '\\' . )* '"'
//! ```
//!
//! `//` starts a line comment. Layout splits each container's frame evenly
//! among its children (vertically for `Screen`, `VStack` and `List`,
//! horizontally for `HStack`) inside a 390x844 screen. Image asset names are
//! replaced with [`PLACEHOLDER_ASSET`].
//!
//! Error codes: `E_EMPTY`, `E_UNBALANCED`, `E_UNKNOWN_COMPONENT`,
//! `E_BAD_LITERAL`, `E_ROOT`, `E_SYNTAX`. Warnings: `W_EMPTY_CONTAINER`,
//! `W_EMPTY_LITERAL`.

use super::{
    count_lines, AdapterError, CompileOutcome, Compiler, Diagnostic, Frame, NodeKind,
    RenderArtifact, RenderDescriptor, RenderNode, Renderer,
};

pub const SCREEN_WIDTH: u32 = 390;
pub const SCREEN_HEIGHT: u32 = 844;
pub const PLACEHOLDER_ASSET: &str = "PLACEHOLDER";

pub mod codes {
    pub const E_EMPTY: &str = "E_EMPTY";
    pub const E_UNBALANCED: &str = "E_UNBALANCED";
    pub const E_UNKNOWN_COMPONENT: &str = "E_UNKNOWN_COMPONENT";
    pub const E_BAD_LITERAL: &str = "E_BAD_LITERAL";
    pub const E_ROOT: &str = "E_ROOT";
    pub const E_SYNTAX: &str = "E_SYNTAX";
    pub const W_EMPTY_CONTAINER: &str = "W_EMPTY_CONTAINER";
    pub const W_EMPTY_LITERAL: &str = "W_EMPTY_LITERAL";
}

use codes::*;

/// Components that may appear below the root, in suggestion order.
const COMPONENTS: [(&str, NodeKind); 7] = [
    ("VStack", NodeKind::VStack),
    ("HStack", NodeKind::HStack),
    ("List", NodeKind::List),
    ("Text", NodeKind::Text),
    ("Button", NodeKind::Button),
    ("Image", NodeKind::Image),
    ("Spacer", NodeKind::Spacer),
];

fn component(name: &str) -> Option<NodeKind> {
    if name == "Screen" {
        return Some(NodeKind::Screen);
    }
    COMPONENTS.iter().find(|(n, _)| *n == name).map(|(_, k)| *k)
}

/// Nearest known component: a case-insensitive match, else the closest name
/// within edit distance 2.
pub fn suggest_component(name: &str) -> Option<&'static str> {
    let lower = name.to_ascii_lowercase();
    if let Some((n, _)) = COMPONENTS.iter().find(|(n, _)| n.to_ascii_lowercase() == lower) {
        return Some(n);
    }
    COMPONENTS
        .iter()
        .map(|(n, _)| (strsim::levenshtein(&lower, &n.to_ascii_lowercase()), *n))
        .filter(|(d, _)| *d <= 2)
        .min_by_key(|(d, _)| *d)
        .map(|(_, n)| n)
}

fn is_container(kind: NodeKind) -> bool {
    matches!(
        kind,
        NodeKind::Screen | NodeKind::VStack | NodeKind::HStack | NodeKind::List
    )
}

fn takes_literal(kind: NodeKind) -> bool {
    matches!(kind, NodeKind::Text | NodeKind::Button | NodeKind::Image)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Open,
    Close,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(source: &str) -> (Vec<Token>, Vec<Diagnostic>) {
    let mut tokens = Vec::new();
    let mut diags = Vec::new();
    let chars: Vec<char> = source.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '{' | '}' => {
                let tok = if c == '{' { Tok::Open } else { Tok::Close };
                tokens.push(Token { tok, line, col });
                i += 1;
                col += 1;
            }
            '"' => {
                let (start_line, start_col) = (line, col);
                let mut text = String::new();
                i += 1;
                col += 1;
                let mut closed = false;
                while i < chars.len() && chars[i] != '\n' {
                    match chars[i] {
                        '"' => {
                            closed = true;
                            i += 1;
                            col += 1;
                            break;
                        }
                        '\\' if matches!(chars.get(i + 1), Some('"') | Some('\\')) => {
                            text.push(chars[i + 1]);
                            i += 2;
                            col += 2;
                        }
                        other => {
                            text.push(other);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                if !closed {
                    diags.push(Diagnostic::error(
                        start_line,
                        Some(start_col),
                        E_BAD_LITERAL,
                        "unterminated string literal",
                    ));
                }
                tokens.push(Token {
                    tok: Tok::Str(text),
                    line: start_line,
                    col: start_col,
                });
            }
            c if c.is_alphanumeric() || c == '_' => {
                let (start_line, start_col) = (line, col);
                let mut word = String::new();
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    word.push(chars[i]);
                    i += 1;
                    col += 1;
                }
                tokens.push(Token {
                    tok: Tok::Word(word),
                    line: start_line,
                    col: start_col,
                });
            }
            other => {
                diags.push(Diagnostic::error(
                    line,
                    Some(col),
                    E_SYNTAX,
                    format!("unexpected character `{other}`"),
                ));
                i += 1;
                col += 1;
            }
        }
    }
    (tokens, diags)
}

fn check_balance(tokens: &[Token]) -> Vec<Diagnostic> {
    let mut open: Vec<&Token> = Vec::new();
    let mut diags = Vec::new();
    for t in tokens {
        match t.tok {
            Tok::Open => open.push(t),
            Tok::Close if open.pop().is_none() => {
                diags.push(Diagnostic::error(
                    t.line,
                    Some(t.col),
                    E_UNBALANCED,
                    "unbalanced braces: unexpected `}`",
                ));
            }
            _ => {}
        }
    }
    for t in open {
        diags.push(Diagnostic::error(
            t.line,
            Some(t.col),
            E_UNBALANCED,
            "unbalanced braces: `{` is never closed",
        ));
    }
    diags
}

/// Parsed MiniUI element.
#[derive(Debug, Clone, PartialEq)]
pub struct AstNode {
    pub kind: NodeKind,
    pub literal: Option<String>,
    pub line: usize,
    pub children: Vec<AstNode>,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    diags: Vec<Diagnostic>,
    /// Diagnostics that only make sense when braces balance.
    structural: Vec<Diagnostic>,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn at(&self, tok: &Tok) -> bool {
        self.peek().is_some_and(|t| &t.tok == tok)
    }

    fn program(&mut self) -> Option<AstNode> {
        let first = self.peek()?.clone();
        let root = if first.tok == Tok::Word("Screen".into()) {
            self.bump();
            let children = if self.at(&Tok::Open) {
                self.bump();
                let c = self.children();
                if self.at(&Tok::Close) {
                    self.bump();
                }
                c
            } else {
                self.diags.push(Diagnostic::error(
                    first.line,
                    Some(first.col),
                    E_SYNTAX,
                    "expected `{` after `Screen`",
                ));
                self.children()
            };
            if let Some(t) = self.peek() {
                self.structural.push(Diagnostic::error(
                    t.line,
                    Some(t.col),
                    E_ROOT,
                    "content after the closing brace of `Screen`",
                ));
            }
            Some(AstNode {
                kind: NodeKind::Screen,
                literal: None,
                line: first.line,
                children,
            })
        } else {
            self.diags.push(Diagnostic::error(
                first.line,
                Some(first.col),
                E_ROOT,
                "program must begin with `Screen`",
            ));
            None
        };
        // Keep scanning whatever is left so token-local errors still surface.
        while self.peek().is_some() {
            if self.at(&Tok::Close) {
                self.bump();
            } else {
                self.node();
            }
        }
        root
    }

    fn children(&mut self) -> Vec<AstNode> {
        let mut out = Vec::new();
        while let Some(t) = self.peek() {
            if t.tok == Tok::Close {
                break;
            }
            if let Some(n) = self.node() {
                out.push(n);
            }
        }
        out
    }

    fn block(&mut self) -> Vec<AstNode> {
        self.bump();
        let c = self.children();
        if self.at(&Tok::Close) {
            self.bump();
        }
        c
    }

    fn node(&mut self) -> Option<AstNode> {
        let t = self.bump()?;
        match t.tok {
            Tok::Word(name) => match component(&name) {
                Some(NodeKind::Screen) => {
                    self.diags.push(Diagnostic::error(
                        t.line,
                        Some(t.col),
                        E_ROOT,
                        "`Screen` may only appear as the root",
                    ));
                    if self.at(&Tok::Open) {
                        self.block();
                    }
                    None
                }
                Some(kind) if is_container(kind) => {
                    if !self.at(&Tok::Open) {
                        self.diags.push(Diagnostic::error(
                            t.line,
                            Some(t.col),
                            E_SYNTAX,
                            format!("expected `{{` after `{name}`"),
                        ));
                        return Some(AstNode {
                            kind,
                            literal: None,
                            line: t.line,
                            children: Vec::new(),
                        });
                    }
                    let children = self.block();
                    if children.is_empty() {
                        self.diags.push(Diagnostic::warning(
                            t.line,
                            Some(t.col),
                            W_EMPTY_CONTAINER,
                            format!("`{name}` has no children"),
                        ));
                    }
                    Some(AstNode {
                        kind,
                        literal: None,
                        line: t.line,
                        children,
                    })
                }
                Some(kind) if takes_literal(kind) => {
                    let literal = match self.peek().map(|n| n.tok.clone()) {
                        Some(Tok::Str(s)) => {
                            self.bump();
                            if s.trim().is_empty() {
                                self.diags.push(Diagnostic::warning(
                                    t.line,
                                    Some(t.col),
                                    W_EMPTY_LITERAL,
                                    format!("`{name}` has an empty literal"),
                                ));
                            }
                            s
                        }
                        Some(Tok::Word(w)) if component(&w).is_none() => {
                            let n = self.bump().expect("peeked");
                            self.diags.push(Diagnostic::error(
                                n.line,
                                Some(n.col),
                                E_BAD_LITERAL,
                                format!("expected string literal after `{name}`, found `{w}`"),
                            ));
                            w
                        }
                        _ => {
                            self.diags.push(Diagnostic::error(
                                t.line,
                                Some(t.col),
                                E_BAD_LITERAL,
                                format!("expected string literal after `{name}`"),
                            ));
                            String::new()
                        }
                    };
                    Some(AstNode {
                        kind,
                        literal: Some(literal),
                        line: t.line,
                        children: Vec::new(),
                    })
                }
                Some(kind) => Some(AstNode {
                    kind,
                    literal: None,
                    line: t.line,
                    children: Vec::new(),
                }),
                None => {
                    let message = match suggest_component(&name) {
                        Some(s) => format!("unknown component `{name}`; did you mean `{s}`?"),
                        None => format!("unknown component `{name}`"),
                    };
                    self.diags
                        .push(Diagnostic::error(t.line, Some(t.col), E_UNKNOWN_COMPONENT, message));
                    match self.peek().map(|n| &n.tok) {
                        Some(Tok::Open) => {
                            self.block();
                        }
                        Some(Tok::Str(_)) => {
                            self.bump();
                        }
                        _ => {}
                    }
                    None
                }
            },
            Tok::Str(_) => {
                self.diags.push(Diagnostic::error(
                    t.line,
                    Some(t.col),
                    E_SYNTAX,
                    "unexpected string literal",
                ));
                None
            }
            Tok::Open => {
                self.diags.push(Diagnostic::error(
                    t.line,
                    Some(t.col),
                    E_SYNTAX,
                    "unexpected `{`",
                ));
                self.pos -= 1;
                self.block();
                None
            }
            Tok::Close => None,
        }
    }
}

/// Compiles `source`, returning the outcome and, on success, the tree.
pub fn parse(source: &str) -> (CompileOutcome, Option<AstNode>) {
    let total_lines = count_lines(source);
    let (tokens, mut diags) = lex(source);
    if tokens.is_empty() {
        if diags.is_empty() {
            diags.push(Diagnostic::error(1, None, E_EMPTY, "source is empty"));
        }
        return (CompileOutcome::new(diags, total_lines), None);
    }
    let balance = check_balance(&tokens);
    let balanced = balance.is_empty();
    let mut parser = Parser {
        tokens,
        pos: 0,
        diags: Vec::new(),
        structural: Vec::new(),
    };
    let root = parser.program();
    diags.extend(balance);
    diags.extend(parser.diags);
    if balanced {
        diags.extend(parser.structural);
    }
    diags.sort_by_key(|d| (d.line, d.column));
    let outcome = CompileOutcome::new(diags, total_lines);
    let root = if outcome.success { root } else { None };
    (outcome, root)
}

fn split(frame: Frame, n: usize, i: usize, vertical: bool) -> Frame {
    let (n, i) = (n as u64, i as u64);
    if vertical {
        let y0 = frame.y as u64 + frame.height as u64 * i / n;
        let y1 = frame.y as u64 + frame.height as u64 * (i + 1) / n;
        Frame {
            y: y0 as u32,
            height: (y1 - y0) as u32,
            ..frame
        }
    } else {
        let x0 = frame.x as u64 + frame.width as u64 * i / n;
        let x1 = frame.x as u64 + frame.width as u64 * (i + 1) / n;
        Frame {
            x: x0 as u32,
            width: (x1 - x0) as u32,
            ..frame
        }
    }
}

fn layout(node: &AstNode, frame: Frame) -> RenderNode {
    let vertical = node.kind != NodeKind::HStack;
    let n = node.children.len();
    let children = node
        .children
        .iter()
        .enumerate()
        .map(|(i, c)| layout(c, split(frame, n, i, vertical)))
        .collect();
    let (text, asset) = match node.kind {
        NodeKind::Text | NodeKind::Button => (node.literal.clone(), None),
        NodeKind::Image => (None, Some(PLACEHOLDER_ASSET.to_string())),
        _ => (None, None),
    };
    RenderNode {
        kind: node.kind,
        text,
        asset,
        frame,
        children,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MiniUiCompiler;

impl Compiler for MiniUiCompiler {
    fn compile(&self, source: &str) -> Result<CompileOutcome, AdapterError> {
        Ok(parse(source).0)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MiniUiRenderer;

impl Renderer for MiniUiRenderer {
    fn render(&self, source: &str) -> Result<RenderArtifact, AdapterError> {
        let (outcome, root) = parse(source);
        let root = match (outcome.success, root) {
            (true, Some(root)) => root,
            _ => {
                return Err(AdapterError::Precondition(
                    "render requires a program that compiles".into(),
                ))
            }
        };
        let screen = Frame {
            x: 0,
            y: 0,
            width: SCREEN_WIDTH,
            height: SCREEN_HEIGHT,
        };
        Ok(RenderArtifact::from_descriptor(RenderDescriptor {
            placeholder: PLACEHOLDER_ASSET.to_string(),
            root: layout(&root, screen),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compile(src: &str) -> CompileOutcome {
        MiniUiCompiler.compile(src).unwrap()
    }

    fn codes(o: &CompileOutcome) -> Vec<(&str, usize)> {
        o.errors().map(|d| (d.code.as_str(), d.line)).collect()
    }

    #[test]
    fn minimal_program_compiles() {
        let o = compile(r#"Screen { VStack { Text "hi" } }"#);
        assert!(o.success);
        assert!(o.diagnostics.is_empty());
        assert_eq!(o.total_lines, 1);
    }

    #[test]
    fn missing_brace_is_one_unbalanced_error() {
        let o = compile(r#"Screen { VStack { Text "hi" }"#);
        assert!(!o.success);
        assert_eq!(codes(&o), vec![(E_UNBALANCED, 1)]);
    }

    #[test]
    fn empty_source() {
        let o = compile("");
        assert!(!o.success);
        assert_eq!(o.total_lines, 0);
        assert_eq!(o.diagnostics[0].code, E_EMPTY);
        assert_eq!(compile("  \n // only a comment\n").diagnostics[0].code, E_EMPTY);
    }

    #[test]
    fn unknown_component_with_suggestion() {
        let o = compile("Screen {\n  Vstack {\n    Text \"a\"\n  }\n}");
        assert_eq!(codes(&o), vec![(E_UNKNOWN_COMPONENT, 2)]);
        assert!(o.diagnostics[0].message.contains("did you mean `VStack`"));
        let o = compile("Screen {\n  Txt \"a\"\n}");
        assert!(o.diagnostics[0].message.contains("did you mean `Text`"));
        let o = compile("Screen {\n  Carousel \"a\"\n}");
        assert!(!o.diagnostics[0].message.contains("did you mean"));
    }

    #[test]
    fn literal_errors() {
        let o = compile("Screen {\n  Text \"oops\n}");
        assert_eq!(codes(&o), vec![(E_BAD_LITERAL, 2)]);
        assert_eq!(o.diagnostics[0].message, "unterminated string literal");
        let o = compile("Screen {\n  Text hello\n}");
        assert_eq!(codes(&o), vec![(E_BAD_LITERAL, 2)]);
        assert!(o.diagnostics[0].message.contains("found `hello`"));
        let o = compile("Screen {\n  Button\n}");
        assert_eq!(codes(&o), vec![(E_BAD_LITERAL, 2)]);
    }

    #[test]
    fn root_errors() {
        assert_eq!(codes(&compile("VStack { Text \"a\" }")), vec![(E_ROOT, 1)]);
        assert_eq!(
            codes(&compile("Screen { Spacer }\nText \"x\"")),
            vec![(E_ROOT, 2)]
        );
        assert_eq!(
            codes(&compile("Screen { Screen { Spacer } }")),
            vec![(E_ROOT, 1)]
        );
    }

    #[test]
    fn extra_closing_brace_reports_only_the_imbalance() {
        let o = compile("Screen {\n  Spacer\n}\n}");
        assert_eq!(codes(&o), vec![(E_UNBALANCED, 4)]);
    }

    #[test]
    fn warnings_do_not_fail() {
        let o = compile("Screen {\n  VStack { }\n  Text \"\"\n}");
        assert!(o.success);
        let w: Vec<_> = o.diagnostics.iter().map(|d| d.code.as_str()).collect();
        assert_eq!(w, vec![W_EMPTY_CONTAINER, W_EMPTY_LITERAL]);
    }

    #[test]
    fn escapes_in_literals() {
        let (o, root) = parse(r#"Screen { Text "say \"hi\"" }"#);
        assert!(o.success);
        assert_eq!(root.unwrap().children[0].literal.as_deref(), Some("say \"hi\""));
    }

    #[test]
    fn multiple_errors_are_all_reported() {
        let src = "Screen {\n  Txt \"a\"\n  Text b\n  Spacer\n  Buton \"c\"\n}";
        let o = compile(src);
        assert_eq!(
            codes(&o),
            vec![(E_UNKNOWN_COMPONENT, 2), (E_BAD_LITERAL, 3), (E_UNKNOWN_COMPONENT, 5)]
        );
        assert_eq!(o.total_lines, 6);
    }

    #[test]
    fn render_single_text_fills_screen() {
        let art = MiniUiRenderer.render(r#"Screen { Text "hi" }"#).unwrap();
        let root = &art.descriptor.root;
        assert_eq!((art.width_px, art.height_px), (390, 844));
        assert_eq!(root.children.len(), 1);
        let text = &root.children[0];
        assert_eq!(text.kind, NodeKind::Text);
        assert_eq!(text.text.as_deref(), Some("hi"));
        let f = text.frame;
        assert!(f.x + f.width <= 390 && f.y + f.height <= 844);
        assert_eq!(f, Frame { x: 0, y: 0, width: 390, height: 844 });
    }

    #[test]
    fn render_equal_split() {
        let art = MiniUiRenderer
            .render(r#"Screen { HStack { Text "a" Text "b" Text "c" } Spacer }"#)
            .unwrap();
        let hstack = &art.descriptor.root.children[0];
        assert_eq!(hstack.frame.height, 422);
        let widths: Vec<u32> = hstack.children.iter().map(|c| c.frame.width).collect();
        assert_eq!(widths, vec![130, 130, 130]);
        assert_eq!(art.descriptor.root.children[1].frame.y, 422);
    }

    #[test]
    fn render_is_deterministic_and_uses_placeholder() {
        let src = r#"Screen { Image "logo" }"#;
        let a = MiniUiRenderer.render(src).unwrap();
        let b = MiniUiRenderer.render(src).unwrap();
        assert_eq!(a.blob, b.blob);
        let img = &a.descriptor.root.children[0];
        assert_eq!(img.kind, NodeKind::Image);
        assert_eq!(img.asset.as_deref(), Some(PLACEHOLDER_ASSET));
        assert!(!String::from_utf8(a.to_bytes()).unwrap().contains("logo"));
    }

    #[test]
    fn render_rejects_non_compiling_source() {
        assert!(matches!(
            MiniUiRenderer.render("Screen {"),
            Err(AdapterError::Precondition(_))
        ));
    }

    const FRAGMENTS: [&str; 12] = [
        "Screen {", "}", "  Text \"a\"", "  Txt \"b\"", "  VStack {", "  HStak {", "  Button \"go",
        "  Image logo", "  Spacer", "{", "", "  // note",
    ];

    proptest::proptest! {
        #[test]
        fn compile_contract(picks in proptest::collection::vec(0usize..FRAGMENTS.len(), 0..14)) {
            let src = picks.iter().map(|&i| FRAGMENTS[i]).collect::<Vec<_>>().join("\n");
            let o = compile(&src);
            proptest::prop_assert_eq!(&o, &compile(&src));
            proptest::prop_assert_eq!(o.total_lines, src.lines().count());
            proptest::prop_assert_eq!(o.success, o.errors().next().is_none());
            if o.success {
                proptest::prop_assert!(MiniUiRenderer.render(&src).is_ok());
                proptest::prop_assert_eq!(crate::scoring::error_free_fraction(&o).unwrap(), 1.0);
            } else {
                for d in o.errors() {
                    proptest::prop_assert!(d.line >= 1 && d.line <= o.total_lines.max(1));
                }
                if o.total_lines > 0 {
                    proptest::prop_assert!(crate::scoring::error_free_fraction(&o).unwrap() < 1.0);
                }
            }
        }
    }
}
