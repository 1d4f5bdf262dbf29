//! Scheme export as a gzipped tar archive. The archive holds only synthetic
//! data, aggregate reports and chart descriptions rendered from synthetic
//! data.

use dpchart_core::charts::{chart_json, render_chart_data, ChartSpec};
use dpchart_core::engine::Scheme;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::session::scheme_json;

fn append(tar: &mut tar::Builder<GzEncoder<Vec<u8>>>, path: &str, bytes: &[u8]) -> std::io::Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    // Fixed timestamp so identical schemes give identical archives.
    header.set_mtime(0);
    header.set_cksum();
    tar.append_data(&mut header, path, bytes)
}

/// Entries, under a `<scheme id>/` prefix: `synthetic.csv`, `schema.json`,
/// `report.json`, `scheme.json` and `charts/<chart id>.json`.
pub fn export_archive(scheme: &Scheme, charts: &[ChartSpec]) -> std::io::Result<Vec<u8>> {
    let mut tar = tar::Builder::new(GzEncoder::new(Vec::new(), Compression::default()));
    let prefix = &scheme.id;
    let json = |v: &serde_json::Value| serde_json::to_vec_pretty(v).expect("value serializes");
    append(&mut tar, &format!("{prefix}/synthetic.csv"), scheme.synthetic().to_csv().as_bytes())?;
    append(&mut tar, &format!("{prefix}/schema.json"), &json(&serde_json::to_value(&scheme.schema)?))?;
    append(&mut tar, &format!("{prefix}/report.json"), &json(&serde_json::to_value(&scheme.metrics)?))?;
    append(&mut tar, &format!("{prefix}/scheme.json"), &json(&scheme_json(scheme)))?;
    for spec in charts {
        // A chart that does not render on the synthetic data is left out.
        if let Ok(data) = render_chart_data(scheme.synthetic(), spec) {
            append(&mut tar, &format!("{prefix}/charts/{}.json", spec.id), &json(&chart_json(spec, &data)))?;
        }
    }
    tar.into_inner()?.finish()
}
