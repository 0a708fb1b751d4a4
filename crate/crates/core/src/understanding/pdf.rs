//! Structural check for downloaded PDFs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// How far from either end the header and trailer markers may sit.
const MARKER_WINDOW: usize = 1024;

fn find_last(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).rposition(|w| w == needle)
}

/// True when `bytes` has a PDF header, an end-of-file marker, and a
/// `startxref` offset that lands on a cross-reference table or stream object.
fn is_structurally_valid(bytes: &[u8]) -> bool {
    let head = &bytes[..bytes.len().min(MARKER_WINDOW)];
    if find_last(head, b"%PDF-").is_none() {
        return false;
    }
    let tail_start = bytes.len().saturating_sub(MARKER_WINDOW);
    let tail = &bytes[tail_start..];
    if find_last(tail, b"%%EOF").is_none() {
        return false;
    }
    let Some(sx) = find_last(tail, b"startxref") else {
        return false;
    };
    let after = &tail[sx + b"startxref".len()..];
    let digits: String = after
        .iter()
        .map(|&b| b as char)
        .skip_while(|c| c.is_ascii_whitespace())
        .take_while(char::is_ascii_digit)
        .collect();
    let Ok(offset) = digits.parse::<usize>() else {
        return false;
    };
    if offset >= bytes.len() {
        return false;
    }
    let target = &bytes[offset..];
    if target.starts_with(b"xref") {
        return true;
    }
    // cross-reference stream: "<num> <gen> obj"
    let text: String = target.iter().take(32).map(|&b| b as char).collect();
    let mut parts = text.split_ascii_whitespace();
    matches!(
        (parts.next(), parts.next(), parts.next()),
        (Some(n), Some(g), Some(o))
            if n.chars().all(|c| c.is_ascii_digit())
                && g.chars().all(|c| c.is_ascii_digit())
                && o.starts_with("obj")
    )
}

/// Checks a downloaded PDF. Invalid files are deleted so the caller can
/// fetch them again.
pub fn validate_pdf(path: &Path) -> Result<bool> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_structurally_valid(&bytes) {
        return Ok(true);
    }
    tracing::warn!(path = %path.display(), "invalid PDF removed");
    fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal one-page PDF with a correct xref offset.
    fn minimal_pdf() -> Vec<u8> {
        let body = "%PDF-1.4\n1 0 obj\n<< /Type /Catalog /Pages 2 0 R >>\nendobj\n\
                    2 0 obj\n<< /Type /Pages /Kids [] /Count 0 >>\nendobj\n";
        let xref_at = body.len();
        format!(
            "{body}xref\n0 3\n0000000000 65535 f \n0000000009 00000 n \n0000000058 00000 n \n\
             trailer\n<< /Size 3 /Root 1 0 R >>\nstartxref\n{xref_at}\n%%EOF\n"
        )
        .into_bytes()
    }

    #[test]
    fn valid_pdf_passes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ok.pdf");
        fs::write(&p, minimal_pdf()).unwrap();
        assert!(validate_pdf(&p).unwrap());
        assert!(p.exists());
    }

    #[test]
    fn truncated_and_empty_files_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("cut.pdf");
        let full = minimal_pdf();
        fs::write(&t, &full[..full.len() / 2]).unwrap();
        assert!(!validate_pdf(&t).unwrap());
        assert!(!t.exists());
        let z = dir.path().join("zero.pdf");
        fs::write(&z, b"").unwrap();
        assert!(!validate_pdf(&z).unwrap());
    }

    #[test]
    fn bad_offset_fails_and_missing_file_errors() {
        let mut bytes = minimal_pdf();
        let s = String::from_utf8(bytes.clone()).unwrap();
        let fixed = s.replace(&format!("startxref\n{}", s.find("xref\n0 3").unwrap()), "startxref\n3");
        bytes = fixed.into_bytes();
        assert!(!is_structurally_valid(&bytes));
        assert!(matches!(
            validate_pdf(Path::new("/nonexistent/x.pdf")),
            Err(Error::Io { .. })
        ));
    }
}
