//! Ontological schemas: concepts, properties, structural triples and textual
//! descriptions, plus TF-IDF pooled text vectors for every concept.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};

use crate::error::{Error, Result};
use crate::io::{read_lines, write_text, VectorTable};
use crate::numcore::Tensor;

/// Property identifiers that are always routed to descriptions.
pub const COMMENT_PROPERTIES: [&str; 2] = ["rdfs:comment", "comment"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PropertyTag {
    Hierarchy,
    Attribute,
    DomainRange,
    Comment,
    Other,
}

impl PropertyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PropertyTag::Hierarchy => "hierarchy",
            PropertyTag::Attribute => "attribute",
            PropertyTag::DomainRange => "domain_range",
            PropertyTag::Comment => "comment",
            PropertyTag::Other => "other",
        }
    }

    /// Row label used in ablation reports.
    pub fn ablation_label(self) -> &'static str {
        match self {
            PropertyTag::Hierarchy => "-hie",
            PropertyTag::Attribute => "-att",
            PropertyTag::DomainRange => "-domain&range",
            PropertyTag::Comment => "-text",
            PropertyTag::Other => "-other",
        }
    }

    pub const DROPPABLE: [PropertyTag; 4] = [
        PropertyTag::Hierarchy,
        PropertyTag::Attribute,
        PropertyTag::DomainRange,
        PropertyTag::Comment,
    ];
}

impl fmt::Display for PropertyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PropertyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "hierarchy" => PropertyTag::Hierarchy,
            "attribute" => PropertyTag::Attribute,
            "domain_range" => PropertyTag::DomainRange,
            "comment" => PropertyTag::Comment,
            "other" => PropertyTag::Other,
            other => return Err(Error::UnknownTag(other.to_string())),
        })
    }
}

/// Report label for a drop set: `all` when empty, otherwise the joined row names.
pub fn ablation_label(drop: &BTreeSet<PropertyTag>) -> String {
    if drop.is_empty() {
        "all".to_string()
    } else {
        drop.iter()
            .map(|t| t.ablation_label())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Index-based structural triple `(head concept, property, tail concept)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SchemaTriple {
    pub head: usize,
    pub property: usize,
    pub tail: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OntologySchema {
    concepts: IndexSet<String>,
    properties: IndexSet<String>,
    tags: Vec<PropertyTag>,
    triples: Vec<SchemaTriple>,
    descriptions: IndexMap<usize, String>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Require every property in the tag map and every concept in the
    /// descriptions file.
    pub strict: bool,
}

impl OntologySchema {
    pub fn new() -> Self {
        Self {
            concepts: IndexSet::new(),
            properties: IndexSet::new(),
            tags: Vec::new(),
            triples: Vec::new(),
            descriptions: IndexMap::new(),
        }
    }

    pub fn add_concept(&mut self, id: &str) -> Result<usize> {
        let id = validate_id(id)?;
        Ok(self.concepts.insert_full(id.to_string()).0)
    }

    pub fn add_property(&mut self, id: &str, tag: PropertyTag) -> Result<usize> {
        let id = validate_id(id)?;
        let (i, fresh) = self.properties.insert_full(id.to_string());
        if fresh {
            self.tags.push(tag);
        } else {
            self.tags[i] = tag;
        }
        Ok(i)
    }

    /// Adds a structural triple, creating concepts as needed. The property must
    /// exist and must not be the comment property.
    pub fn add_triple(&mut self, head: &str, property: &str, tail: &str) -> Result<()> {
        let p = self
            .properties
            .get_index_of(property)
            .ok_or_else(|| Error::Undeclared(property.to_string()))?;
        if self.tags[p] == PropertyTag::Comment {
            return Err(Error::Invalid(format!(
                "comment property `{property}` cannot form a structural triple"
            )));
        }
        let h = self.add_concept(head)?;
        let t = self.add_concept(tail)?;
        self.triples.push(SchemaTriple {
            head: h,
            property: p,
            tail: t,
        });
        Ok(())
    }

    pub fn set_description(&mut self, concept: &str, text: &str) -> Result<()> {
        let c = self.add_concept(concept)?;
        self.descriptions.insert(c, text.trim().to_string());
        Ok(())
    }

    pub fn concepts(&self) -> impl ExactSizeIterator<Item = &str> {
        self.concepts.iter().map(String::as_str)
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn concept(&self, i: usize) -> &str {
        &self.concepts[i]
    }

    pub fn concept_index(&self, id: &str) -> Option<usize> {
        self.concepts.get_index_of(id)
    }

    pub fn properties(&self) -> impl ExactSizeIterator<Item = &str> {
        self.properties.iter().map(String::as_str)
    }

    pub fn num_properties(&self) -> usize {
        self.properties.len()
    }

    pub fn property(&self, i: usize) -> &str {
        &self.properties[i]
    }

    pub fn property_index(&self, id: &str) -> Option<usize> {
        self.properties.get_index_of(id)
    }

    pub fn tag(&self, property: usize) -> PropertyTag {
        self.tags[property]
    }

    pub fn tag_of(&self, property: &str) -> Option<PropertyTag> {
        self.property_index(property).map(|i| self.tags[i])
    }

    pub fn triples(&self) -> &[SchemaTriple] {
        &self.triples
    }

    /// Triples as identifier strings.
    pub fn triple_ids(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.triples.iter().map(|t| {
            (
                self.concept(t.head),
                self.property(t.property),
                self.concept(t.tail),
            )
        })
    }

    pub fn description(&self, concept: usize) -> Option<&str> {
        self.descriptions.get(&concept).map(String::as_str)
    }

    pub fn num_descriptions(&self) -> usize {
        self.descriptions.len()
    }

    /// Loads the three schema files. Triples whose property is tagged
    /// `comment` (or is named `rdfs:comment`) become descriptions.
    pub fn load(
        triples: &Path,
        descriptions: Option<&Path>,
        tags: Option<&Path>,
        opts: LoadOptions,
    ) -> Result<Self> {
        let mut tag_map: IndexMap<String, PropertyTag> = IndexMap::new();
        if let Some(path) = tags {
            for (ln, line) in read_lines(path)? {
                let (p, t) = split2(&line)
                    .ok_or_else(|| Error::parse(path, ln, "expected `property<TAB>tag`"))?;
                let tag = t
                    .parse::<PropertyTag>()
                    .map_err(|e| Error::parse(path, ln, e.to_string()))?;
                validate_id(p).map_err(|e| Error::parse(path, ln, e.to_string()))?;
                tag_map.insert(p.to_string(), tag);
            }
        }

        let mut declared: Option<IndexMap<String, String>> = None;
        if let Some(path) = descriptions {
            let mut map = IndexMap::new();
            for (ln, line) in read_lines(path)? {
                let (c, text) = match line.split_once('\t') {
                    Some((c, text)) => (c, text),
                    None => (line.as_str(), ""),
                };
                validate_id(c).map_err(|e| Error::parse(path, ln, e.to_string()))?;
                map.insert(c.to_string(), text.to_string());
            }
            declared = Some(map);
        }

        let mut schema = Self::new();
        for (p, t) in &tag_map {
            schema.add_property(p, *t)?;
        }
        if let Some(decl) = &declared {
            for (c, text) in decl {
                let i = schema.add_concept(c)?;
                if !text.trim().is_empty() {
                    schema.descriptions.insert(i, text.trim().to_string());
                }
            }
        }

        for (ln, line) in read_lines(triples)? {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().take(2).any(|f| f.trim().is_empty()) {
                return Err(Error::parse(
                    triples,
                    ln,
                    "expected three tab-separated fields",
                ));
            }
            let (h, p, t) = (fields[0], fields[1], fields[2]);
            let tag = match tag_map.get(p) {
                Some(tag) => *tag,
                None if COMMENT_PROPERTIES.contains(&p) => PropertyTag::Comment,
                None if opts.strict => {
                    return Err(Error::parse(
                        triples,
                        ln,
                        format!("undeclared property `{p}`"),
                    ))
                }
                None => PropertyTag::Other,
            };
            if schema.property_index(p).is_none() {
                schema.add_property(p, tag)?;
            }
            if tag == PropertyTag::Comment {
                let c = schema
                    .add_concept(h)
                    .map_err(|e| Error::parse(triples, ln, e.to_string()))?;
                let entry = schema.descriptions.entry(c).or_default();
                if !entry.is_empty() {
                    entry.push(' ');
                }
                entry.push_str(t.trim());
                continue;
            }
            if opts.strict {
                if let Some(decl) = &declared {
                    for c in [h, t] {
                        if !decl.contains_key(c) {
                            return Err(Error::parse(
                                triples,
                                ln,
                                format!("undeclared concept `{c}`"),
                            ));
                        }
                    }
                }
            }
            schema
                .add_triple(h, p, t)
                .map_err(|e| Error::parse(triples, ln, e.to_string()))?;
        }

        schema.sort_descriptions();
        Ok(schema)
    }

    fn sort_descriptions(&mut self) {
        self.descriptions.sort_keys();
    }

    pub fn triples_text(&self) -> String {
        let mut s = String::new();
        for (h, p, t) in self.triple_ids() {
            s.push_str(&format!("{h}\t{p}\t{t}\n"));
        }
        s
    }

    /// Every concept is listed, so the file also declares the concept set.
    pub fn descriptions_text(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.concepts.iter().enumerate() {
            s.push_str(c);
            s.push('\t');
            if let Some(d) = self.descriptions.get(&i) {
                s.push_str(d);
            }
            s.push('\n');
        }
        s
    }

    pub fn tags_text(&self) -> String {
        let mut s = String::new();
        for (p, t) in self.properties.iter().zip(&self.tags) {
            s.push_str(&format!("{p}\t{t}\n"));
        }
        s
    }

    pub fn save(&self, triples: &Path, descriptions: &Path, tags: &Path) -> Result<()> {
        write_text(triples, &self.triples_text())?;
        write_text(descriptions, &self.descriptions_text())?;
        write_text(tags, &self.tags_text())
    }

    /// Copy without the triples of the dropped tags; dropping `comment`
    /// clears the descriptions. Concepts and properties are kept.
    pub fn ablate(&self, drop: &BTreeSet<PropertyTag>) -> Result<Self> {
        if let Some(bad) = drop.iter().find(|t| **t == PropertyTag::Other) {
            return Err(Error::UnknownTag(bad.to_string()));
        }
        let mut out = self.clone();
        out.triples
            .retain(|t| !drop.contains(&self.tags[t.property]));
        if drop.contains(&PropertyTag::Comment) {
            out.descriptions.clear();
        }
        Ok(out)
    }

    pub fn structural_triple_count(&self) -> usize {
        self.triples.len()
    }
}

impl Default for OntologySchema {
    fn default() -> Self {
        Self::new()
    }
}

/// Parses a comma-separated drop list such as `attribute,comment`.
pub fn parse_drop_set<S: AsRef<str>>(items: &[S]) -> Result<BTreeSet<PropertyTag>> {
    let mut out = BTreeSet::new();
    for item in items {
        for part in item.as_ref().split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let tag: PropertyTag = part.parse()?;
            if tag == PropertyTag::Other {
                return Err(Error::UnknownTag(part.to_string()));
            }
            out.insert(tag);
        }
    }
    Ok(out)
}

fn validate_id(id: &str) -> Result<&str> {
    let id = id.trim();
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(Error::Invalid(format!("invalid identifier `{id}`")));
    }
    Ok(id)
}

fn split2(line: &str) -> Option<(&str, &str)> {
    let (a, b) = line.split_once('\t')?;
    (!a.trim().is_empty() && !b.trim().is_empty()).then_some((a.trim(), b.trim()))
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Per-concept pooled text vectors.
#[derive(Clone, Debug)]
pub struct TextMatrix {
    /// `num_concepts x dim`, row order follows the schema's concept order.
    pub vectors: Tensor,
    /// Number of documents (described concepts) in the IDF corpus.
    pub num_documents: usize,
    /// Document frequency of each token.
    pub document_frequency: HashMap<String, usize>,
}

impl TextMatrix {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, concept: usize) -> &[f64] {
        self.vectors.row_slice(concept)
    }

    /// `ln(N / df) + 1`
    pub fn idf(&self, token: &str) -> Option<f64> {
        let df = *self.document_frequency.get(token)?;
        Some((self.num_documents as f64 / df as f64).ln() + 1.0)
    }

    /// All-zero text matrix of the given width (structure-only runs).
    pub fn zeros(num_concepts: usize, dim: usize) -> Self {
        Self {
            vectors: Tensor::zeros(num_concepts.max(1), dim),
            num_documents: 0,
            document_frequency: HashMap::new(),
        }
    }
}

/// TF-IDF weighted mean of word vectors for each concept description.
///
/// `tf = count / doc_len`, `idf = ln(N / df) + 1` over the described
/// concepts. Tokens missing from `words` are skipped; a description with no
/// known token yields the zero vector.
pub fn text_vectors(schema: &OntologySchema, words: &VectorTable) -> Result<TextMatrix> {
    if words.is_empty() {
        return Err(Error::Invalid("word vector table is empty".into()));
    }
    let dim = words.dim();
    let docs: Vec<(usize, Vec<String>)> = (0..schema.num_concepts())
        .filter_map(|c| schema.description(c).map(|d| (c, tokenize(d))))
        .collect();

    let mut df: HashMap<String, usize> = HashMap::new();
    for (_, tokens) in &docs {
        let unique: BTreeSet<&String> = tokens.iter().collect();
        for t in unique {
            *df.entry(t.clone()).or_default() += 1;
        }
    }
    let n_docs = docs.len();

    let mut vectors = Tensor::zeros(schema.num_concepts().max(1), dim);
    for (c, tokens) in &docs {
        if tokens.is_empty() {
            continue;
        }
        // BTreeMap keeps the accumulation order independent of hashing
        let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let len = tokens.len() as f64;
        let mut acc = vec![0.0; dim];
        let mut total = 0.0;
        for (tok, count) in counts {
            let Some(v) = words.get(tok) else { continue };
            let tf = count as f64 / len;
            let idf = (n_docs as f64 / df[tok] as f64).ln() + 1.0;
            let w = tf * idf;
            total += w;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += w * x;
            }
        }
        if total > 0.0 {
            let row = vectors.row_slice_mut(*c);
            for (r, a) in row.iter_mut().zip(acc) {
                *r = a / total;
            }
        }
    }
    Ok(TextMatrix {
        vectors,
        num_documents: n_docs,
        document_frequency: df,
    })
}
