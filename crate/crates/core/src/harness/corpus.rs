//! Deterministic corpus of attribute-heavy HTML pages for measuring the
//! rule-based purifier.
//!
//! Pages are built from the document index alone, so every run sees the same
//! 50 documents. Each one records the visible text and links it contains so
//! callers can check that nothing meaningful was dropped.

use serde::Serialize;

use crate::purify::purify_html;

pub const CORPUS_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusDoc {
    pub index: usize,
    pub html: String,
    /// Text nodes a reader would see.
    pub texts: Vec<String>,
    pub hrefs: Vec<String>,
}

const SECTIONS: [&str; 8] =
    ["Overview", "Pricing", "Release notes", "Documentation", "Community", "Careers", "Support", "Changelog"];
const WORDS: [&str; 12] = [
    "quarterly",
    "revenue",
    "latency",
    "migration",
    "pipeline",
    "dataset",
    "benchmark",
    "cluster",
    "schema",
    "rollout",
    "invoice",
    "telemetry",
];
const FRAMEWORK_CLASSES: [&str; 6] = [
    "flex items-center justify-between px-4 py-2",
    "grid grid-cols-12 gap-6 md:gap-8 lg:gap-10",
    "text-sm font-medium text-gray-700 hover:text-gray-900",
    "btn btn-outline-secondary btn-lg rounded-pill shadow-sm",
    "container-fluid mx-auto max-w-7xl sm:px-6 lg:px-8",
    "card card-body border-0 bg-light text-muted small",
];

fn word(i: usize, j: usize) -> &'static str {
    WORDS[(i * 7 + j * 5) % WORDS.len()]
}

fn class(i: usize, j: usize) -> &'static str {
    FRAMEWORK_CLASSES[(i + j * 3) % FRAMEWORK_CLASSES.len()]
}

fn sentence(i: usize, j: usize) -> String {
    format!(
        "The {} {} report for item {} covers {} and {}.",
        word(i, j),
        word(i, j + 1),
        i * 100 + j,
        word(i, j + 2),
        word(i, j + 3)
    )
}

/// Document `index` of the corpus. Any index works; the corpus proper is
/// `0..CORPUS_SIZE`.
pub fn document(index: usize) -> CorpusDoc {
    let i = index;
    let mut html = String::new();
    let mut texts = Vec::new();
    let mut hrefs = Vec::new();
    let title = format!("{} {} page {i}", SECTIONS[i % SECTIONS.len()], word(i, 0));

    html.push_str("<!DOCTYPE html>\n<html lang=\"en\" data-theme=\"light\" class=\"no-js\">\n<head>\n");
    html.push_str(&format!("<title>{title}</title>\n"));
    texts.push(title.clone());
    html.push_str("<meta charset=\"utf-8\"><meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">\n");
    html.push_str(&format!(
        "<style>.c{i}{{margin:0 auto;padding:{}px;color:#333}} .nav-{i} a{{text-decoration:none}}</style>\n",
        4 + i % 9
    ));
    html.push_str(&format!(
        "<script>window.dataLayer=window.dataLayer||[];dataLayer.push({{page:{i},ts:Date.now()}});</script>\n"
    ));
    html.push_str("</head>\n");
    html.push_str(&format!(
        "<body class=\"{}\" data-page-id=\"{i}\" data-layout=\"default\" style=\"min-height:100vh\">\n",
        class(i, 0)
    ));

    html.push_str(&format!(
        "<nav id=\"nav-{i}\" class=\"{}\" role=\"navigation\" data-collapsed=\"false\">\n<ul class=\"{}\">\n",
        class(i, 1),
        class(i, 2)
    ));
    let links = 3 + i % 4;
    for j in 0..links {
        let label = SECTIONS[(i + j) % SECTIONS.len()];
        let href = format!("/{}/{}", label.to_lowercase().replace(' ', "-"), i * 10 + j);
        html.push_str(&format!(
            "<li class=\"{}\" data-index=\"{j}\"><a href=\"{href}\" class=\"{}\" data-track=\"nav:{j}\" onclick=\"track('{href}')\" style=\"font-weight:{}\">{label}</a></li>\n",
            class(i, j + 3),
            class(i, j + 4),
            400 + 100 * (j % 3)
        ));
        texts.push(label.to_string());
        hrefs.push(href);
    }
    html.push_str("</ul>\n</nav>\n");

    html.push_str(&format!("<main class=\"{}\" id=\"content\">\n", class(i, 5)));
    let paragraphs = 2 + i % 5;
    for j in 0..paragraphs {
        let heading = format!("{} {}", SECTIONS[(i + j + 2) % SECTIONS.len()], j + 1);
        let body = sentence(i, j);
        html.push_str(&format!(
            "<section class=\"{}\" data-section=\"{j}\" data-analytics-id=\"sec-{i}-{j}\">\n<h2 class=\"{}\" style=\"margin-top:{}rem\">{heading}</h2>\n<div class=\"{}\"><p class=\"{}\">{body}</p></div>\n",
            class(i, j + 6),
            class(i, j + 7),
            j + 1,
            class(i, j + 8),
            class(i, j + 9)
        ));
        texts.push(heading);
        texts.push(body);
        if j % 2 == 0 {
            let src = format!("/img/{i}-{j}.png");
            html.push_str(&format!(
                "<img src=\"{src}\" alt=\"figure {j}\" class=\"{}\" loading=\"lazy\" width=\"640\" height=\"360\" data-lightbox=\"g{i}\">\n",
                class(i, j + 10)
            ));
        }
        html.push_str("<!-- tracking pixel placeholder -->\n</section>\n");
    }
    if i.is_multiple_of(3) {
        let cell = format!("{} total: {}", word(i, 4), 1000 + i * 37);
        html.push_str(&format!(
            "<table class=\"{}\"><tr class=\"{}\"><td class=\"{}\" style=\"text-align:right\">{cell}</td></tr></table>\n",
            class(i, 11),
            class(i, 12),
            class(i, 13)
        ));
        texts.push(cell);
    }
    html.push_str("</main>\n");

    let footer = format!("Copyright {} {}", 2000 + i % 25, word(i, 5));
    html.push_str(&format!(
        "<footer class=\"{}\" data-version=\"{i}.0\"><span class=\"{}\">{footer}</span></footer>\n",
        class(i, 14),
        class(i, 15)
    ));
    texts.push(footer);
    html.push_str(&format!(
        "<script type=\"application/ld+json\">{{\"@context\":\"https://schema.org\",\"@type\":\"WebPage\",\"id\":{i}}}</script>\n"
    ));
    html.push_str("</body>\n</html>\n");

    CorpusDoc { index, html, texts, hrefs }
}

pub fn corpus() -> Vec<CorpusDoc> {
    (0..CORPUS_SIZE).map(document).collect()
}

/// Characters removed across the whole corpus, as a fraction of its size.
pub fn corpus_reduction() -> f64 {
    let (before, after) = corpus().iter().fold((0usize, 0usize), |(b, a), doc| {
        let p = purify_html(&doc.html);
        (b + p.original_length, a + p.purified_length)
    });
    1.0 - after as f64 / before as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_distinct() {
        let a = corpus();
        assert_eq!(a, corpus());
        assert_eq!(a.len(), CORPUS_SIZE);
        let unique: std::collections::HashSet<_> = a.iter().map(|d| &d.html).collect();
        assert_eq!(unique.len(), CORPUS_SIZE);
    }

    #[test]
    fn purification_keeps_text_and_links() {
        for doc in corpus() {
            let out = purify_html(&doc.html).content;
            for t in &doc.texts {
                assert!(out.contains(t.as_str()), "doc {} lost {t:?}", doc.index);
            }
            for h in &doc.hrefs {
                assert!(out.contains(h.as_str()), "doc {} lost {h}", doc.index);
            }
            assert!(!out.contains("dataLayer"));
            assert!(!out.contains("data-track"));
        }
    }

    #[test]
    fn corpus_reduction_clears_floor() {
        let r = corpus_reduction();
        assert!(r >= 0.40, "reduction {r}");
    }
}
