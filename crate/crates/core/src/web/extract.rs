use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use ego_tree::NodeRef;
use scraper::{ElementRef, Html, Node, Selector};

use super::{ContentKind, ExtractedDocument, Fetcher, SearchCandidate, WebError};
use crate::clock::Clock;

const BOILERPLATE_TAGS: &[&str] = &[
    "script", "style", "noscript", "nav", "header", "footer", "aside", "form", "iframe", "svg",
    "template", "button", "select", "menu", "head",
];
const BOILERPLATE_MARKERS: &[&str] = &["nav", "menu", "footer", "sidebar", "breadcrumb", "cookie", "banner"];
const BLOCK_TAGS: &[&str] = &[
    "p", "div", "section", "article", "main", "h1", "h2", "h3", "h4", "h5", "h6", "li", "ul", "ol",
    "table", "tr", "td", "th", "pre", "blockquote", "br", "dd", "dt", "figcaption",
];

fn is_boilerplate(el: &scraper::node::Element) -> bool {
    if BOILERPLATE_TAGS.contains(&el.name()) {
        return true;
    }
    if el.attr("role").is_some_and(|r| matches!(r, "navigation" | "banner" | "contentinfo")) {
        return true;
    }
    let tokens = el.attr("class").into_iter().chain(el.attr("id"));
    tokens
        .flat_map(|v| v.split(|c: char| c.is_whitespace() || c == '-' || c == '_'))
        .any(|t| BOILERPLATE_MARKERS.contains(&t.to_ascii_lowercase().as_str()))
}

struct Collector {
    paragraphs: Vec<String>,
    buffer: String,
}

impl Collector {
    fn flush(&mut self) {
        let text = self.buffer.split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() {
            self.paragraphs.push(text);
        }
        self.buffer.clear();
    }

    fn walk(&mut self, node: NodeRef<'_, Node>) {
        match node.value() {
            Node::Text(t) => self.buffer.push_str(t),
            Node::Element(el) => {
                if is_boilerplate(el) {
                    return;
                }
                let block = BLOCK_TAGS.contains(&el.name());
                if block {
                    self.flush();
                }
                for child in node.children() {
                    self.walk(child);
                }
                if block {
                    self.flush();
                } else {
                    self.buffer.push(' ');
                }
            }
            _ => {
                for child in node.children() {
                    self.walk(child);
                }
            }
        }
    }
}

fn first<'a>(doc: &'a Html, selector: &str) -> Option<ElementRef<'a>> {
    let sel = Selector::parse(selector).expect("static selector");
    doc.select(&sel).next()
}

/// Main-content text of an HTML page (paragraphs separated by blank lines)
/// and its title. Scripts, styles and navigation-like regions are dropped;
/// `article`, `main` or `[role=main]` narrow the root when present.
pub fn extract_html(html: &str) -> (String, Option<String>) {
    let doc = Html::parse_document(html);
    let title = first(&doc, "title")
        .or_else(|| first(&doc, "h1"))
        .map(|e| e.text().collect::<Vec<_>>().join(" ").split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|t| !t.is_empty());
    let root = first(&doc, "article")
        .or_else(|| first(&doc, "main"))
        .or_else(|| first(&doc, "[role=main]"))
        .or_else(|| first(&doc, "body"));
    let mut collector = Collector {
        paragraphs: Vec::new(),
        buffer: String::new(),
    };
    match root {
        Some(r) => collector.walk(*r),
        None => collector.walk(doc.tree.root()),
    }
    collector.flush();
    (collector.paragraphs.join("\n\n"), title)
}

/// Embedded text layer of a PDF, pages joined by blank lines.
pub fn extract_pdf_text(bytes: &[u8]) -> Result<String, String> {
    let doc = lopdf::Document::load_mem(bytes).map_err(|e| format!("pdf parse: {e}"))?;
    let mut pages = Vec::new();
    for number in doc.get_pages().keys() {
        let text = doc.extract_text(&[*number]).map_err(|e| format!("pdf text: {e}"))?;
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() {
            pages.push(text);
        }
    }
    Ok(pages.join("\n\n"))
}

pub trait OcrEngine: Send + Sync {
    /// Recognized text of at most `page_limit` pages.
    fn ocr_pdf(&self, pdf: &[u8], page_limit: usize) -> Result<String, String>;
}

/// Runs an external OCR program. In the argument list `{pdf}` becomes a
/// temporary file holding the document and `{pages}` the page limit; the
/// program's standard output is the recognized text.
#[derive(Debug, Clone)]
pub struct CommandOcr {
    pub command: Vec<String>,
}

static OCR_COUNTER: AtomicU64 = AtomicU64::new(0);

impl OcrEngine for CommandOcr {
    fn ocr_pdf(&self, pdf: &[u8], page_limit: usize) -> Result<String, String> {
        let (program, args) = self.command.split_first().ok_or("empty OCR command")?;
        let path: PathBuf = std::env::temp_dir().join(format!(
            "fieldrag-ocr-{}-{}.pdf",
            std::process::id(),
            OCR_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&path, pdf).map_err(|e| e.to_string())?;
        let pdf_arg = path.to_string_lossy().into_owned();
        let args: Vec<String> = args
            .iter()
            .map(|a| a.replace("{pdf}", &pdf_arg).replace("{pages}", &page_limit.to_string()))
            .collect();
        let output = Command::new(program).args(&args).output();
        let _ = std::fs::remove_file(&path);
        let output = output.map_err(|e| format!("{program}: {e}"))?;
        if !output.status.success() {
            return Err(format!("{program} exited with {}", output.status));
        }
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }
}

#[derive(Clone, Copy, Default)]
pub struct ExtractOptions<'a> {
    /// `None` disables the OCR stage.
    pub ocr: Option<&'a dyn OcrEngine>,
    pub ocr_page_limit: usize,
}

/// Fetches a candidate and runs the extraction chain: HTML main content for
/// HTML responses; embedded text, then OCR, for PDFs. The first stage that
/// yields non-empty text decides `content_kind`.
pub fn extract_content(
    candidate: &SearchCandidate,
    fetcher: &dyn Fetcher,
    options: ExtractOptions<'_>,
    clock: &dyn Clock,
) -> Result<ExtractedDocument, WebError> {
    let resource = fetcher.fetch(&candidate.url)?;
    let mut reasons = Vec::new();
    let done = |body: String, kind: ContentKind, title: Option<String>| ExtractedDocument {
        url: candidate.url.clone(),
        title: title
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| candidate.title.clone()),
        body_text: body,
        content_kind: kind,
        fetched_at: clock.now(),
    };

    if !resource.is_pdf() {
        let (body, title) = extract_html(&String::from_utf8_lossy(&resource.body));
        if !body.trim().is_empty() {
            return Ok(done(body, ContentKind::Html, title));
        }
        reasons.push("html: no main content".to_string());
    } else {
        match extract_pdf_text(&resource.body) {
            Ok(text) if !text.trim().is_empty() => return Ok(done(text, ContentKind::PdfText, None)),
            Ok(_) => reasons.push("pdf_text: no text layer".to_string()),
            Err(e) => reasons.push(e),
        }
        match options.ocr {
            Some(ocr) => match ocr.ocr_pdf(&resource.body, options.ocr_page_limit) {
                Ok(text) if !text.trim().is_empty() => {
                    return Ok(done(text.trim().to_string(), ContentKind::PdfOcr, None))
                }
                Ok(_) => reasons.push("pdf_ocr: no text recognized".to_string()),
                Err(e) => reasons.push(format!("pdf_ocr: {e}")),
            },
            None => reasons.push("pdf_ocr: disabled".to_string()),
        }
    }
    log::warn!("skipping {}: {}", candidate.url, reasons.join("; "));
    Err(WebError::AllFallbacksFailed {
        url: candidate.url.clone(),
        reasons,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::web::FixtureFetcher;
    use lopdf::content::{Content, Operation};
    use lopdf::{dictionary, Document, Object, Stream};

    /// Single-page PDF; `text: None` gives a page with no text layer.
    pub(crate) fn pdf_fixture(text: Option<&str>) -> Vec<u8> {
        let mut doc = Document::with_version("1.5");
        let pages_id = doc.new_object_id();
        let font_id = doc.add_object(dictionary! {
            "Type" => "Font", "Subtype" => "Type1", "BaseFont" => "Courier",
        });
        let resources_id = doc.add_object(dictionary! { "Font" => dictionary! { "F1" => font_id } });
        let mut operations = Vec::new();
        if let Some(t) = text {
            operations = vec![
                Operation::new("BT", vec![]),
                Operation::new("Tf", vec!["F1".into(), 12.into()]),
                Operation::new("Td", vec![72.into(), 700.into()]),
                Operation::new("Tj", vec![Object::string_literal(t)]),
                Operation::new("ET", vec![]),
            ];
        }
        let content = Content { operations };
        let content_id = doc.add_object(Stream::new(dictionary! {}, content.encode().unwrap()));
        let page_id = doc.add_object(dictionary! {
            "Type" => "Page", "Parent" => pages_id, "Contents" => content_id,
        });
        doc.objects.insert(
            pages_id,
            Object::Dictionary(dictionary! {
                "Type" => "Pages",
                "Kids" => vec![page_id.into()],
                "Count" => 1,
                "Resources" => resources_id,
                "MediaBox" => vec![0.into(), 0.into(), 595.into(), 842.into()],
            }),
        );
        let catalog_id = doc.add_object(dictionary! { "Type" => "Catalog", "Pages" => pages_id });
        doc.trailer.set("Root", catalog_id);
        let mut buf = Vec::new();
        doc.save_to(&mut buf).unwrap();
        buf
    }

    fn candidate(url: &str) -> SearchCandidate {
        SearchCandidate {
            url: url.to_string(),
            title: "fallback title".to_string(),
            snippet: String::new(),
            source_rank: 1,
        }
    }

    const PAGE: &str = r#"<html><head><title>Wheat MSP 2024</title><script>var x = 1;</script></head>
        <body><nav><a href="/">Home</a><a href="/about">About us</a></nav>
        <div class="sidebar">Related links</div>
        <article><h1>Minimum support price</h1>
        <p>The MSP for wheat is Rs 2275 per quintal.</p>
        <p>Procurement runs from <b>April</b> to June.</p></article>
        <footer>Copyright</footer></body></html>"#;

    #[test]
    fn html_keeps_article_and_drops_navigation() {
        let (body, title) = extract_html(PAGE);
        assert_eq!(title.as_deref(), Some("Wheat MSP 2024"));
        assert!(body.contains("The MSP for wheat is Rs 2275 per quintal."));
        assert!(body.contains("Procurement runs from April to June."));
        for junk in ["Home", "About us", "Related links", "Copyright", "var x"] {
            assert!(!body.contains(junk), "{junk} leaked into {body:?}");
        }
    }

    #[test]
    fn html_without_article_uses_body() {
        let (body, _) = extract_html("<body><nav>Menu</nav><div><p>Soil pH matters.</p></div></body>");
        assert_eq!(body, "Soil pH matters.");
    }

    #[test]
    fn fetch_chain_reports_kind() {
        let mut f = FixtureFetcher::default();
        f.insert("https://a.gov.in/page", "text/html", PAGE.as_bytes().to_vec());
        f.insert("https://a.gov.in/doc.pdf", "application/pdf", pdf_fixture(Some("Kharif sowing advisory")));
        f.insert("https://a.gov.in/scan.pdf", "application/pdf", pdf_fixture(None));
        let clock = FixedClock::epoch();
        let opts = ExtractOptions::default();

        let html = extract_content(&candidate("https://a.gov.in/page"), &f, opts, &clock).unwrap();
        assert_eq!(html.content_kind, ContentKind::Html);

        let pdf = extract_content(&candidate("https://a.gov.in/doc.pdf"), &f, opts, &clock).unwrap();
        assert_eq!(pdf.content_kind, ContentKind::PdfText);
        assert_eq!(pdf.body_text, "Kharif sowing advisory");
        assert_eq!(pdf.title, "fallback title");

        let scan = extract_content(&candidate("https://a.gov.in/scan.pdf"), &f, opts, &clock);
        assert!(matches!(scan, Err(WebError::AllFallbacksFailed { .. })));
    }

    struct FakeOcr;
    impl OcrEngine for FakeOcr {
        fn ocr_pdf(&self, _: &[u8], page_limit: usize) -> Result<String, String> {
            Ok(format!("recognized {page_limit} pages"))
        }
    }

    #[test]
    fn ocr_stage_runs_when_enabled() {
        let mut f = FixtureFetcher::default();
        f.insert("https://a.gov.in/scan.pdf", "application/pdf", pdf_fixture(None));
        let opts = ExtractOptions {
            ocr: Some(&FakeOcr),
            ocr_page_limit: 20,
        };
        let doc = extract_content(&candidate("https://a.gov.in/scan.pdf"), &f, opts, &FixedClock::epoch()).unwrap();
        assert_eq!(doc.content_kind, ContentKind::PdfOcr);
        assert_eq!(doc.body_text, "recognized 20 pages");
    }

    #[test]
    fn command_ocr_substitutes_placeholders() {
        let ocr = CommandOcr {
            command: vec!["sh".into(), "-c".into(), "test -s \"$0\" && echo pages=$1".into(), "{pdf}".into(), "{pages}".into()],
        };
        assert_eq!(ocr.ocr_pdf(b"%PDF-1.5", 7).unwrap().trim(), "pages=7");
    }
}
