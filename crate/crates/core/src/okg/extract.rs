use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use regex::{Captures, Regex};

use super::pack::{CompiledPack, Direction, Scope, Target};
use super::{EdgeType, ExtractionWarning, NodeKind, NodeRecord, Okg, Provenance, TypedEdge};
use crate::corpus::{ArticleUnit, AuthorityType, Corpus, NodeId};
use crate::error::Result;

fn joiner_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\s|및|또는|·|,|、|와|과|부터|까지|내지|and|or|through)*$").expect("joiner"))
}

struct Resolver<'a> {
    corpus: &'a Corpus,
    pack: &'a CompiledPack,
    root_of: HashMap<&'a str, &'a str>,
    by_label: HashMap<(&'a str, &'a str), &'a NodeId>,
    global_label: HashMap<&'a str, &'a NodeId>,
}

impl<'a> Resolver<'a> {
    fn new(corpus: &'a Corpus, pack: &'a CompiledPack) -> Self {
        let mut root_of = HashMap::new();
        for d in corpus.documents() {
            let mut cur = d;
            let mut guard = 0;
            while let Some(p) = cur.parent.as_deref().and_then(|p| corpus.document(p)) {
                cur = p;
                guard += 1;
                if guard > corpus.documents().len() {
                    break;
                }
            }
            root_of.insert(d.doc_id.as_str(), cur.doc_id.as_str());
        }
        let mut by_label = HashMap::new();
        for a in corpus.articles() {
            by_label.insert((a.doc_id.as_str(), a.article_label.as_str()), &a.node_id);
        }
        // global lookup prefers manifest order
        let mut global_label = HashMap::new();
        for d in corpus.documents() {
            for a in corpus.articles().iter().filter(|a| a.doc_id == d.doc_id) {
                global_label.entry(a.article_label.as_str()).or_insert(&a.node_id);
            }
        }
        Resolver {
            corpus,
            pack,
            root_of,
            by_label,
            global_label,
        }
    }

    fn same_family(&self, a: &str, b: &str) -> bool {
        self.root_of.get(a) == self.root_of.get(b)
    }

    fn by_title(&self, title: &str) -> Option<&'a str> {
        let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        let want = squash(title);
        self.corpus
            .documents()
            .iter()
            .find(|d| d.title == title || d.aliases.iter().any(|a| a == title))
            .or_else(|| {
                self.corpus
                    .documents()
                    .iter()
                    .find(|d| squash(&d.title) == want || d.aliases.iter().any(|a| squash(a) == want))
            })
            .map(|d| d.doc_id.as_str())
    }

    /// Resolves a relative qualifier ("법", "영") from the citing document.
    fn relative(&self, citing: &str, rel: &str) -> Option<&'a str> {
        let auth = *self.pack.pack.relative_qualifiers.get(rel)?;
        let citing_doc = self.corpus.document(citing)?;
        if citing_doc.authority_type == auth {
            return Some(self.corpus.document(citing)?.doc_id.as_str());
        }
        let mut cur = citing_doc;
        while let Some(p) = cur.parent.as_deref().and_then(|p| self.corpus.document(p)) {
            if p.authority_type == auth {
                return Some(p.doc_id.as_str());
            }
            cur = p;
        }
        self.corpus
            .documents()
            .iter()
            .find(|d| d.authority_type == auth && self.same_family(&d.doc_id, citing))
            .map(|d| d.doc_id.as_str())
    }
}

fn fill_template(tpl: &str, caps: &Captures<'_>) -> String {
    let get = |name: &str| caps.name(name).map(|m| m.as_str().trim()).unwrap_or("");
    let sub = caps
        .name("sub")
        .map(|m| format!("의{}", m.as_str()))
        .unwrap_or_default();
    tpl.replace("{art}", get("art"))
        .replace("{num}", get("num"))
        .replace("{sub}", &sub)
}

fn provenance_start(caps: &Captures<'_>) -> usize {
    // the relative-qualifier alternative carries a one-char boundary guard
    caps.name("rel")
        .map(|m| m.start())
        .unwrap_or_else(|| caps.get(0).expect("whole match").start())
}

enum Qualifier<'a> {
    Resolved(&'a str),
    Unresolved(String),
    None,
}

struct Builder {
    nodes: BTreeMap<NodeId, NodeRecord>,
    edges: Vec<TypedEdge>,
    seen: HashSet<(NodeId, NodeId, EdgeType)>,
    warnings: Vec<ExtractionWarning>,
}

impl Builder {
    fn push(&mut self, e: TypedEdge) {
        if e.etype != EdgeType::PartOf && e.src == e.dst {
            return;
        }
        if !self.seen.insert(e.key()) {
            return;
        }
        let mirror = e.etype.mirror().map(|m| TypedEdge {
            src: e.dst.clone(),
            dst: e.src.clone(),
            etype: m,
            provenance: e.provenance.clone(),
        });
        self.edges.push(e);
        if let Some(m) = mirror {
            if self.seen.insert(m.key()) {
                self.edges.push(m);
            }
        }
    }

    fn stub(&mut self, id: NodeId, doc_id: Option<String>, is_form: bool) {
        self.nodes.entry(id.clone()).or_insert(NodeRecord {
            node_id: id,
            kind: NodeKind::External,
            doc_id,
            tier: None,
            authority_type: None,
            is_form,
        });
    }

    fn warn(&mut self, node: &NodeId, message: String) {
        self.warnings.push(ExtractionWarning {
            node_id: node.clone(),
            message,
        });
    }
}

fn scan_text(a: &ArticleUnit) -> String {
    if a.text.trim().is_empty() {
        a.provisions
            .iter()
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    } else {
        a.text.clone()
    }
}

fn is_preamble(label: &str) -> bool {
    label == "본문" || label == "chapeau"
}

fn containment(article: &ArticleUnit, b: &mut Builder) {
    let prov = |label: &str| Provenance {
        rule: "containment".into(),
        start: 0,
        end: 0,
        excerpt: label.to_string(),
    };
    for p in article.provisions.iter().filter(|p| !is_preamble(&p.unit_label)) {
        let container = p
            .unit_label
            .split_once('_')
            .map(|(para, _)| para.to_string())
            .or_else(|| {
                // "(a)(1)" nests under "(a)"
                let rest = p.unit_label.strip_prefix('(')?;
                let idx = rest.find('(')?;
                Some(p.unit_label[..idx + 1].to_string())
            })
            .filter(|para| article.has_provision(para))
            .map(|para| article.node_id.child(&para))
            .unwrap_or_else(|| article.node_id.clone());
        b.push(TypedEdge {
            src: article.node_id.child(&p.unit_label),
            dst: container,
            etype: EdgeType::PartOf,
            provenance: prov(&p.unit_label),
        });
    }
}

/// Extracts the typed graph from a corpus. The result depends only on the
/// corpus contents and the pack.
pub fn build_okg(corpus: &Corpus, pack: &CompiledPack) -> Result<Okg> {
    let resolver = Resolver::new(corpus, pack);
    let mut b = Builder {
        nodes: BTreeMap::new(),
        edges: Vec::new(),
        seen: HashSet::new(),
        warnings: Vec::new(),
    };

    for a in corpus.articles() {
        let doc = corpus.document(&a.doc_id).expect("validated on load");
        b.nodes.insert(
            a.node_id.clone(),
            NodeRecord {
                node_id: a.node_id.clone(),
                kind: NodeKind::Article,
                doc_id: Some(a.doc_id.clone()),
                tier: Some(doc.tier),
                authority_type: Some(doc.authority_type),
                is_form: a.is_form,
            },
        );
        for p in a.provisions.iter().filter(|p| !is_preamble(&p.unit_label)) {
            let id = a.node_id.child(&p.unit_label);
            b.nodes.insert(
                id.clone(),
                NodeRecord {
                    node_id: id,
                    kind: NodeKind::Provision,
                    doc_id: Some(a.doc_id.clone()),
                    tier: Some(doc.tier),
                    authority_type: Some(doc.authority_type),
                    is_form: false,
                },
            );
        }
    }

    // target -> citing articles, for realising delegations
    let mut cited_by: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    let mut pending: Vec<(NodeId, AuthorityType, Provenance)> = Vec::new();

    for a in corpus.articles() {
        containment(a, &mut b);
        let text = scan_text(a);
        let mut consumed: Vec<(usize, usize)> = Vec::new();
        let mut last_cite: Option<(usize, String)> = None;
        let mut last_explicit: Option<String> = None;
        let defs_allowed = pack
            .definition_heading
            .as_ref()
            .is_none_or(|re| re.is_match(&a.heading));

        for (ri, (rule, re, target)) in pack.rules.iter().enumerate() {
            if matches!(target, Target::HeadingAnchor) && !defs_allowed {
                continue;
            }
            let rule_id = format!("{}#{}", pack.pack.id, ri);
            let mut claimed = Vec::new();
            for caps in re.captures_iter(&text) {
                let whole = caps.get(0).expect("whole match");
                if consumed
                    .iter()
                    .any(|&(s, e)| whole.start() < e && s < whole.end())
                {
                    continue;
                }
                let start = provenance_start(&caps);
                let prov = Provenance {
                    rule: rule_id.clone(),
                    start,
                    end: whole.end(),
                    excerpt: text[start..whole.end()].to_string(),
                };
                if rule.consume {
                    claimed.push((whole.start(), whole.end()));
                }
                let dst = match target {
                    Target::Delegate(auth) => {
                        pending.push((a.node_id.clone(), *auth, prov));
                        continue;
                    }
                    Target::HeadingAnchor => {
                        let term = caps.name("term").map(|m| m.as_str().trim()).unwrap_or("");
                        match heading_anchor(corpus, a, term) {
                            Some(id) => id,
                            None => {
                                b.warn(&a.node_id, format!("defined term `{term}` has no anchor article"));
                                continue;
                            }
                        }
                    }
                    Target::Article(tpl) | Target::Form(tpl) => {
                        let label = fill_template(tpl, &caps);
                        let qualifier = if let Some(t) = caps.name("doc") {
                            match resolver.by_title(t.as_str().trim()) {
                                Some(d) => Qualifier::Resolved(d),
                                None => Qualifier::Unresolved(t.as_str().trim().to_string()),
                            }
                        } else if let Some(r) = caps.name("rel") {
                            match resolver.relative(&a.doc_id, r.as_str()) {
                                Some(d) => Qualifier::Resolved(d),
                                None => Qualifier::Unresolved(r.as_str().to_string()),
                            }
                        } else if let Some(s) = caps.name("same") {
                            let short: String = s.as_str().trim_start_matches("같은").trim().to_string();
                            match last_explicit
                                .as_deref()
                                .and_then(|d| corpus.document(d))
                                .map(|d| d.doc_id.as_str())
                                .or_else(|| resolver.relative(&a.doc_id, &short))
                            {
                                Some(d) => Qualifier::Resolved(d),
                                None => Qualifier::Unresolved(short),
                            }
                        } else {
                            match &last_cite {
                                Some((end, d))
                                    if *end <= whole.start()
                                        && joiner_re().is_match(&text[*end..whole.start()]) =>
                                {
                                    Qualifier::Resolved(corpus.document(d).map_or(a.doc_id.as_str(), |m| m.doc_id.as_str()))
                                }
                                _ => Qualifier::None,
                            }
                        };
                        let explicit = caps.name("doc").is_some()
                            || caps.name("rel").is_some()
                            || caps.name("same").is_some();
                        let (found, doc_for_stub) = match &qualifier {
                            Qualifier::Resolved(d) => (
                                resolver.by_label.get(&(*d, label.as_str())).map(|id| (*id).clone()),
                                Some(d.to_string()),
                            ),
                            Qualifier::Unresolved(name) => (None, Some(name.clone())),
                            Qualifier::None => match rule.scope {
                                Scope::SameDocument => (
                                    resolver
                                        .by_label
                                        .get(&(a.doc_id.as_str(), label.as_str()))
                                        .map(|id| (*id).clone()),
                                    Some(a.doc_id.clone()),
                                ),
                                Scope::Global => (
                                    resolver.global_label.get(label.as_str()).map(|id| (*id).clone()),
                                    None,
                                ),
                            },
                        };
                        let resolved_doc = match &qualifier {
                            Qualifier::Resolved(d) => d.to_string(),
                            _ => a.doc_id.clone(),
                        };
                        if explicit {
                            if let Qualifier::Resolved(d) = &qualifier {
                                last_explicit = Some(d.to_string());
                            }
                        }
                        last_cite = Some((whole.end(), resolved_doc));
                        match found {
                            Some(id) => id,
                            None => {
                                let stub_doc = doc_for_stub.unwrap_or_else(|| "external".into());
                                let id = NodeId::new(format!("{stub_doc}_{label}"));
                                b.stub(id.clone(), Some(stub_doc), matches!(target, Target::Form(_)));
                                b.warn(&a.node_id, format!("citation `{}` resolves outside the corpus", prov.excerpt));
                                id
                            }
                        }
                    }
                };
                if matches!(rule.etype, EdgeType::References | EdgeType::Specifies) && dst != a.node_id {
                    cited_by.entry(dst.clone()).or_default().push(a.node_id.clone());
                }
                let (src, dst) = match rule.direction {
                    Direction::Forward => (a.node_id.clone(), dst),
                    Direction::Reverse => (dst, a.node_id.clone()),
                };
                b.push(TypedEdge {
                    src,
                    dst,
                    etype: rule.etype,
                    provenance: prov,
                });
            }
            consumed.extend(claimed);
        }
    }

    let order: HashMap<&NodeId, usize> = corpus
        .articles()
        .iter()
        .enumerate()
        .map(|(i, a)| (&a.node_id, i))
        .collect();
    for (src, auth, prov) in pending {
        let src_doc = corpus.article(&src).map(|a| a.doc_id.clone()).expect("article");
        let delegate_docs: Vec<&str> = corpus
            .documents()
            .iter()
            .filter(|d| d.authority_type == auth && d.doc_id != src_doc && resolver.same_family(&d.doc_id, &src_doc))
            .map(|d| d.doc_id.as_str())
            .collect();
        if delegate_docs.is_empty() {
            let stub = NodeId::new(format!("external:{}", auth.as_str()));
            b.stub(stub.clone(), None, false);
            b.warn(&src, format!("delegation `{}` targets a document outside the corpus", prov.excerpt));
            b.push(TypedEdge {
                src,
                dst: stub,
                etype: EdgeType::DelegatesTo,
                provenance: prov,
            });
            continue;
        }
        let mut targets: Vec<NodeId> = cited_by
            .get(&src)
            .into_iter()
            .flatten()
            .filter(|c| {
                corpus
                    .article(c)
                    .is_some_and(|ca| delegate_docs.contains(&ca.doc_id.as_str()))
            })
            .cloned()
            .collect();
        targets.sort_by_key(|t| order.get(t).copied().unwrap_or(usize::MAX));
        targets.dedup();
        if targets.is_empty() {
            b.warn(
                &src,
                format!("delegation `{}` is not realised in {}", prov.excerpt, delegate_docs.join(", ")),
            );
        }
        for t in targets {
            b.push(TypedEdge {
                src: src.clone(),
                dst: t,
                etype: EdgeType::DelegatesTo,
                provenance: prov.clone(),
            });
        }
    }

    Okg::new(
        b.nodes.into_values().collect(),
        b.edges,
        pack.pack.id.clone(),
        b.warnings,
    )
}

fn heading_anchor(corpus: &Corpus, def: &ArticleUnit, term: &str) -> Option<NodeId> {
    if term.is_empty() {
        return None;
    }
    let candidates = |same_doc: bool| {
        corpus
            .articles()
            .iter()
            .filter(move |a| a.node_id != def.node_id && !a.is_form && (a.doc_id == def.doc_id) == same_doc)
            .find(|a| a.heading.contains(term))
            .map(|a| a.node_id.clone())
    };
    candidates(true).or_else(|| candidates(false))
}
