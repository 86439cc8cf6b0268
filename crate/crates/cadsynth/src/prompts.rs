//! Prompt templates and the documentation excerpt bundled into the binary.

pub const CATALOG_PROMPT: &str = include_str!("../data/prompts/catalog.txt");
pub const CODEGEN_PROMPT: &str = include_str!("../data/prompts/codegen.txt");

pub const BUILTIN_DOCS: &[(&str, &str)] = &[
    ("selectors", include_str!("../data/docs/selectors.txt")),
    ("sketch_polyline", include_str!("../data/docs/sketch_polyline.txt")),
    ("workplane_boolean", include_str!("../data/docs/workplane_boolean.txt")),
    ("workplane_chamfer", include_str!("../data/docs/workplane_chamfer.txt")),
    ("workplane_extrude", include_str!("../data/docs/workplane_extrude.txt")),
    ("workplane_fillet", include_str!("../data/docs/workplane_fillet.txt")),
    ("workplane_hole", include_str!("../data/docs/workplane_hole.txt")),
    ("workplane_pushpoints", include_str!("../data/docs/workplane_pushpoints.txt")),
    ("workplane_revolve", include_str!("../data/docs/workplane_revolve.txt")),
    ("workplane_shell", include_str!("../data/docs/workplane_shell.txt")),
];

/// The bundled excerpt as a corpus, split the same way as an on-disk one.
pub fn builtin_corpus() -> cadsynth_core::tfidf::DocCorpus {
    let docs = BUILTIN_DOCS
        .iter()
        .map(|(id, text)| {
            let (title, body) = text.split_once('\n').unwrap_or((text, ""));
            cadsynth_core::tfidf::Document { doc_id: id.to_string(), title: title.trim().to_string(), body: body.to_string() }
        })
        .collect();
    cadsynth_core::tfidf::DocCorpus::new(docs).expect("bundled docs are valid")
}
