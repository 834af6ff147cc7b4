use std::io::Write;

use super::records::{
    ClassInfo, ClassSize, EmbeddingKind, FaceAnnotation, LabelEmbedding, NsfwAnnotation,
    PredictionRecord, TaxonomyRecord,
};
use super::{headers, IngestError};

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // normalizes -0
        return "0".to_string();
    }
    format!("{v}")
}

/// CSV writer with the canonical dialect: minimal quoting, `\n` endings.
pub struct CsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            inner: csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out),
        }
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), IngestError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, IngestError> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| IngestError::Io(std::io::Error::other(e.to_string())))
    }
}

/// Renders rows into an in-memory CSV document.
pub fn to_csv_string<F>(write: F) -> Result<String, IngestError>
where
    F: FnOnce(&mut CsvWriter<&mut Vec<u8>>) -> Result<(), IngestError>,
{
    let mut buf = Vec::new();
    {
        let mut w = CsvWriter::new(&mut buf);
        write(&mut w)?;
        w.finish()?;
    }
    String::from_utf8(buf).map_err(|e| IngestError::Io(std::io::Error::other(e)))
}

pub fn write_faces<W: Write>(out: W, rows: &[FaceAnnotation]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(headers::FACES)?;
    for f in rows {
        w.row([
            f.image.file_name.clone(),
            f.image.wordnet_id.clone(),
            f.image.split.to_string(),
            f.model.to_string(),
            f.face_index.to_string(),
            fmt_f64(f.bbox[0]),
            fmt_f64(f.bbox[1]),
            fmt_f64(f.bbox[2]),
            fmt_f64(f.bbox[3]),
            fmt_f64(f.det_conf),
            fmt_f64(f.age_years),
            fmt_f64(f.gender_score),
        ])?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_nsfw<W: Write>(out: W, rows: &[NsfwAnnotation]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(headers::NSFW)?;
    for a in rows {
        let mut fields = vec![
            a.image.file_name.clone(),
            a.image.wordnet_id.clone(),
            a.image.split.to_string(),
        ];
        fields.extend(a.probs.iter().map(|p| fmt_f64(*p)));
        w.row(fields)?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_predictions<W: Write>(out: W, rows: &[PredictionRecord]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(headers::PREDICTIONS)?;
    for p in rows {
        let mut fields = vec![
            p.image.file_name.clone(),
            p.image.wordnet_id.clone(),
            p.image.split.to_string(),
            p.model.to_string(),
        ];
        fields.extend(p.top5.iter().cloned());
        w.row(fields)?;
    }
    w.finish()?;
    Ok(())
}

/// Writes embeddings; the header follows the kind and width of the first
/// row (`umap_x,umap_y` for projections, `d0..` for raw vectors).
pub fn write_embeddings<W: Write>(out: W, rows: &[LabelEmbedding]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    let mut header: Vec<String> = vec!["wordnet_id".into(), "label".into()];
    match rows.first() {
        Some(e) if e.kind == EmbeddingKind::Raw => {
            header.extend((0..e.vector.len()).map(|i| format!("d{i}")));
        }
        _ => header.extend(["umap_x".to_string(), "umap_y".to_string()]),
    }
    w.row(&header)?;
    for e in rows {
        let mut fields = vec![e.wordnet_id.clone(), e.label.clone()];
        fields.extend(e.vector.iter().map(|v| fmt_f64(*v)));
        w.row(fields)?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_class_index<W: Write>(out: W, rows: &[ClassInfo]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(headers::CLASSES)?;
    for c in rows {
        w.row([c.class_index.to_string(), c.wordnet_id.clone(), c.label.clone()])?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_vocabulary<W: Write>(out: W, rows: &[TaxonomyRecord]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(headers::VOCABULARY)?;
    for t in rows {
        w.row([t.class_ind.to_string(), t.class_name.clone(), t.n_images.to_string()])?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_class_sizes<W: Write>(out: W, rows: &[ClassSize]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(headers::CLASS_SIZES)?;
    for c in rows {
        w.row([c.wordnet_id.clone(), c.n_train.to_string(), c.n_val.to_string()])?;
    }
    w.finish()?;
    Ok(())
}
