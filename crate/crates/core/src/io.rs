//! Text formats: FIB tractograms, label sidecars, prediction CSVs and
//! `VFCKPT` checkpoints. Writers are deterministic and atomic.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::VoxelMask;
use crate::geometry::{Label, Point3, Streamline, Tractogram};
use crate::models::{Architecture, Model, ModelSpec, Prediction};
use crate::tensor::Pooling;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} is not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Numbered lines (1-based) of a text file.
struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines {
            path,
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(parse_err(self.path, self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn expect_end(&mut self) -> Result<()> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                return Err(parse_err(self.path, i + 1, "unexpected content after the last record"));
            }
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("expected {what}, found `{tok}`")))
}

/// Decimal with at most 9 significant digits; `-0` is written as `0`.
pub fn format_coord(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        format!("{rounded}")
    }
}

pub fn fib_to_string(t: &Tractogram) -> Result<String> {
    if t.is_empty() {
        return Err(Error::arg("a FIB file needs at least one streamline"));
    }
    let mut out = format!("FIB 1\n{}\n", t.len());
    for s in &t.streamlines {
        out.push_str(&format!("{}\n", s.len()));
        for p in s.points() {
            out.push_str(&format!("{} {} {}\n", format_coord(p.x), format_coord(p.y), format_coord(p.z)));
        }
    }
    Ok(out)
}

pub fn save_fib(path: &Path, t: &Tractogram) -> Result<()> {
    write_atomic(path, &fib_to_string(t)?)
}

pub fn parse_fib(path: &Path, text: &str) -> Result<Tractogram> {
    let mut lines = Lines::new(path, text);
    let (ln, header) = lines.next("header")?;
    if header.trim_end() != "FIB 1" {
        return Err(parse_err(path, ln, format!("expected header `FIB 1`, found `{header}`")));
    }
    let (ln, count) = lines.next("streamline count")?;
    let count: usize = parse_num(path, ln, count.trim(), "a streamline count")?;
    if count == 0 {
        return Err(parse_err(path, ln, "streamline count must be at least 1"));
    }
    let mut streamlines = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, n) = lines.next("a point count")?;
        let n: usize = parse_num(path, ln, n.trim(), "a point count")?;
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.next("a point")?;
            let toks: Vec<&str> = l.split(' ').collect();
            if toks.len() != 3 {
                return Err(parse_err(path, ln, format!("expected `x y z`, found `{l}`")));
            }
            let c: Vec<f64> = toks
                .iter()
                .map(|t| parse_num(path, ln, t, "a coordinate"))
                .collect::<Result<_>>()?;
            pts.push(Point3::new(c[0], c[1], c[2]));
        }
        let s = Streamline::new(pts).map_err(|e| parse_err(path, ln, e.to_string()))?;
        streamlines.push(s);
    }
    lines.expect_end()?;
    Ok(Tractogram::new(streamlines))
}

pub fn load_fib(path: &Path) -> Result<Tractogram> {
    parse_fib(path, &read(path)?)
}

/// Contents of a label sidecar: either plausibility tokens or class ids.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelFile {
    Labels(Vec<Label>),
    ClassIds(Vec<u32>),
}

impl LabelFile {
    pub fn len(&self) -> usize {
        match self {
            LabelFile::Labels(l) => l.len(),
            LabelFile::ClassIds(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn labels_to_string(labels: &[Label]) -> String {
    labels.iter().map(|l| format!("{}\n", l.token())).collect()
}

pub fn class_ids_to_string(ids: &[u32]) -> String {
    ids.iter().map(|c| format!("{c}\n")).collect()
}

pub fn save_labels(path: &Path, labels: &[Label]) -> Result<()> {
    write_atomic(path, &labels_to_string(labels))
}

pub fn save_class_ids(path: &Path, ids: &[u32]) -> Result<()> {
    write_atomic(path, &class_ids_to_string(ids))
}

pub fn parse_label_file(path: &Path, text: &str, expected: Option<usize>) -> Result<LabelFile> {
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let tok = raw.trim();
        match tok {
            "p" => labels.push(Label::Plausible),
            "np" => labels.push(Label::NonPlausible),
            _ => ids.push(parse_num::<u32>(path, i + 1, tok, "`p`, `np` or a class id")?),
        }
        if !labels.is_empty() && !ids.is_empty() {
            return Err(parse_err(path, i + 1, "labels and class ids are mixed in one file"));
        }
    }
    let file = if ids.is_empty() { LabelFile::Labels(labels) } else { LabelFile::ClassIds(ids) };
    if let Some(n) = expected {
        if file.len() != n {
            return Err(parse_err(
                path,
                file.len() + 1,
                format!("{} entries for {n} streamlines", file.len()),
            ));
        }
    }
    Ok(file)
}

pub fn load_label_file(path: &Path, expected: Option<usize>) -> Result<LabelFile> {
    parse_label_file(path, &read(path)?, expected)
}

/// Plausibility labels; class-id files are rejected.
pub fn load_labels(path: &Path, expected: Option<usize>) -> Result<Vec<Label>> {
    match load_label_file(path, expected)? {
        LabelFile::Labels(l) => Ok(l),
        LabelFile::ClassIds(_) => Err(parse_err(path, 1, "expected `p`/`np` labels, found class ids")),
    }
}

pub fn load_class_ids(path: &Path, expected: Option<usize>) -> Result<Vec<u32>> {
    match load_label_file(path, expected)? {
        LabelFile::ClassIds(c) => Ok(c),
        LabelFile::Labels(l) if l.is_empty() => Ok(Vec::new()),
        LabelFile::Labels(_) => Err(parse_err(path, 1, "expected class ids, found `p`/`np` labels")),
    }
}

pub const PREDICTIONS_HEADER: &str = "index,prob_plausible,label";

pub fn predictions_to_csv(preds: &[Prediction]) -> String {
    let mut s = format!("{PREDICTIONS_HEADER}\n");
    for (i, p) in preds.iter().enumerate() {
        s.push_str(&format!("{i},{},{}\n", p.prob_plausible(), p.label().token()));
    }
    s
}

/// Hard labels from a prediction CSV written by [`predictions_to_csv`].
pub fn load_prediction_labels(path: &Path) -> Result<Vec<Label>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == PREDICTIONS_HEADER => {}
        _ => return Err(parse_err(path, 1, format!("expected header `{PREDICTIONS_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() != 3 {
            return Err(parse_err(path, i + 1, "expected 3 columns"));
        }
        let idx: usize = parse_num(path, i + 1, cols[0], "a row index")?;
        if idx != out.len() {
            return Err(parse_err(path, i + 1, format!("expected index {}, found {idx}", out.len())));
        }
        let _: f64 = parse_num(path, i + 1, cols[1], "a probability")?;
        out.push(match cols[2] {
            "p" => Label::Plausible,
            "np" => Label::NonPlausible,
            other => return Err(parse_err(path, i + 1, format!("expected `p` or `np`, found `{other}`"))),
        });
    }
    Ok(out)
}

fn join_widths(w: &[usize]) -> String {
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn checkpoint_to_string(model: &Model) -> String {
    let spec = model.spec();
    let blocks: Vec<String> = spec.blocks.iter().map(|b| join_widths(b)).collect();
    let mut s = String::from("VFCKPT 1\n");
    s.push_str(&format!("architecture {}\n", spec.architecture));
    s.push_str(&format!("blocks {}\n", blocks.join(";")));
    s.push_str(&format!("global {}\n", spec.global_width));
    s.push_str(&format!("head {}\n", join_widths(&spec.head)));
    s.push_str(&format!("classes {}\n", spec.classes));
    s.push_str(&format!("k {}\n", spec.k));
    s.push_str(&format!("seed {}\n", spec.seed));
    s.push_str(&format!("activation leaky_relu {}\n", spec.leaky_slope));
    s.push_str(&format!("pooling {}\n", spec.neighbor_pooling.name()));
    s.push_str(&format!("input_scale {}\n", spec.input_scale));
    s.push_str(&format!("params {}\n", model.params().blocks().len()));
    for b in model.params().blocks() {
        s.push_str(&format!("{}\n{} {}\n", b.name, b.rows(), b.cols()));
        let vals: Vec<String> = b.values.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&vals.join(" "));
        s.push('\n');
    }
    s
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &checkpoint_to_string(model))
}

pub fn parse_checkpoint(path: &Path, text: &str) -> Result<Model> {
    let mut lines = Lines::new(path, text);
    let (ln, header) = lines.next("header")?;
    if header != "VFCKPT 1" {
        return Err(parse_err(path, ln, format!("expected header `VFCKPT 1`, found `{header}`")));
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (ln, l) = lines.next(key)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok((ln, v.to_string())),
            _ => Err(parse_err(path, ln, format!("expected `{key} ...`, found `{l}`"))),
        }
    };
    let widths = |ln: usize, v: &str| -> Result<Vec<usize>> {
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|t| parse_num(path, ln, t, "a layer width")).collect()
    };
    let (ln, arch) = field("architecture")?;
    let architecture: Architecture = arch.parse().map_err(|e: Error| parse_err(path, ln, e.to_string()))?;
    let mut spec = ModelSpec::new(architecture);
    let (ln, blocks) = field("blocks")?;
    spec.blocks = blocks.split(';').map(|b| widths(ln, b)).collect::<Result<_>>()?;
    let (ln, v) = field("global")?;
    spec.global_width = parse_num(path, ln, &v, "a width")?;
    let (ln, v) = field("head")?;
    spec.head = widths(ln, &v)?;
    let (ln, v) = field("classes")?;
    spec.classes = parse_num(path, ln, &v, "a class count")?;
    let (ln, v) = field("k")?;
    spec.k = parse_num(path, ln, &v, "k")?;
    let (ln, v) = field("seed")?;
    spec.seed = parse_num(path, ln, &v, "a seed")?;
    let (ln, v) = field("activation")?;
    spec.leaky_slope = match v.split_once(' ') {
        Some(("leaky_relu", slope)) => parse_num(path, ln, slope, "a slope")?,
        _ => return Err(parse_err(path, ln, format!("unsupported activation `{v}`"))),
    };
    let (ln, v) = field("pooling")?;
    spec.neighbor_pooling = v.parse::<Pooling>().map_err(|e| parse_err(path, ln, e.to_string()))?;
    let (ln, v) = field("input_scale")?;
    spec.input_scale = parse_num(path, ln, &v, "a scale")?;
    let (ln, v) = field("params")?;
    let count: usize = parse_num(path, ln, &v, "a parameter count")?;

    let mut model = Model::build(spec).map_err(|e| parse_err(path, ln, e.to_string()))?;
    if model.params().blocks().len() != count {
        return Err(parse_err(
            path,
            ln,
            format!("{count} parameter blocks, architecture has {}", model.params().blocks().len()),
        ));
    }
    for block in model.params_mut().blocks_mut() {
        let (ln, name) = lines.next("a parameter name")?;
        if name != block.name {
            return Err(parse_err(path, ln, format!("expected parameter `{}`, found `{name}`", block.name)));
        }
        let (ln, shape) = lines.next("a parameter shape")?;
        let dims: Vec<usize> = shape
            .split(' ')
            .map(|t| parse_num(path, ln, t, "a dimension"))
            .collect::<Result<_>>()?;
        if dims != [block.rows(), block.cols()] {
            return Err(parse_err(
                path,
                ln,
                format!("parameter `{name}` has shape {:?}, expected {:?}", dims, block.shape()),
            ));
        }
        let (ln, vals) = lines.next("parameter values")?;
        let values: Vec<f64> = vals
            .split(' ')
            .map(|t| parse_num(path, ln, t, "a parameter value"))
            .collect::<Result<_>>()?;
        if values.len() != block.len() {
            return Err(parse_err(path, ln, format!("{} values, expected {}", values.len(), block.len())));
        }
        if values.iter().any(|v: &f64| !v.is_finite()) {
            return Err(parse_err(path, ln, "non-finite parameter value"));
        }
        block.values = values;
    }
    lines.expect_end()?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    parse_checkpoint(path, &read(path)?)
}

/// `VOXMASK 1` text: grid header, then occupied linear indices one per line.
pub fn mask_to_string(mask: &VoxelMask) -> String {
    let idx = mask.occupied_indices();
    let o = mask.origin;
    let mut s = format!(
        "VOXMASK 1\norigin {} {} {}\nvoxel {}\ndims {} {} {}\ncount {}\n",
        o.x, o.y, o.z, mask.voxel_mm, mask.dims[0], mask.dims[1], mask.dims[2], idx.len()
    );
    for i in idx {
        s.push_str(&format!("{i}\n"));
    }
    s
}

pub fn save_mask(path: &Path, mask: &VoxelMask) -> Result<()> {
    write_atomic(path, &mask_to_string(mask))
}

pub fn parse_mask(path: &Path, text: &str) -> Result<VoxelMask> {
    let mut lines = Lines::new(path, text);
    let (ln, header) = lines.next("header")?;
    if header != "VOXMASK 1" {
        return Err(parse_err(path, ln, format!("expected header `VOXMASK 1`, found `{header}`")));
    }
    let mut field = |key: &str, n: usize| -> Result<(usize, Vec<String>)> {
        let (ln, l) = lines.next(key)?;
        let toks: Vec<&str> = l.split(' ').collect();
        if toks.len() != n + 1 || toks[0] != key {
            return Err(parse_err(path, ln, format!("expected `{key}` with {n} values, found `{l}`")));
        }
        Ok((ln, toks[1..].iter().map(|t| t.to_string()).collect()))
    };
    let (ln, o) = field("origin", 3)?;
    let o: Vec<f64> = o.iter().map(|t| parse_num(path, ln, t, "a coordinate")).collect::<Result<_>>()?;
    let (ln, v) = field("voxel", 1)?;
    let voxel: f64 = parse_num(path, ln, &v[0], "a voxel size")?;
    let (ln, d) = field("dims", 3)?;
    let d: Vec<usize> = d.iter().map(|t| parse_num(path, ln, t, "a dimension")).collect::<Result<_>>()?;
    let (ln_count, c) = field("count", 1)?;
    let count: usize = parse_num(path, ln_count, &c[0], "a voxel count")?;
    let mut idx = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, l) = lines.next("a voxel index")?;
        idx.push(parse_num::<usize>(path, ln, l.trim(), "a voxel index")?);
    }
    lines.expect_end()?;
    VoxelMask::from_indices(Point3::new(o[0], o[1], o[2]), voxel, [d[0], d[1], d[2]], &idx)
        .map_err(|e| parse_err(path, ln_count, e.to_string()))
}

pub fn load_mask(path: &Path) -> Result<VoxelMask> {
    parse_mask(path, &read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn random_tractogram(rng: &mut Rng, n: usize) -> Tractogram {
        Tractogram::new(
            (0..n)
                .map(|i| {
                    let pts = (0..2 + i % 7)
                        .map(|_| Point3::new(rng.uniform(-80.0, 80.0), rng.uniform(-1e-3, 1e-3), rng.uniform(-80.0, 80.0)))
                        .collect();
                    Streamline::new(pts).unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn coordinate_format() {
        assert_eq!(format_coord(-0.0), "0");
        assert_eq!(format_coord(1.0), "1");
        assert_eq!(format_coord(12.3456789012), "12.3456789");
        assert_eq!(format_coord(-1.5e-5), "-0.000015");
    }

    #[test]
    fn fib_round_trip() {
        let mut rng = Rng::new(1);
        let t = random_tractogram(&mut rng, 30);
        let text = fib_to_string(&t).unwrap();
        let back = parse_fib(Path::new("x.fib"), &text).unwrap();
        assert_eq!(back.len(), t.len());
        for (a, b) in t.streamlines.iter().zip(&back.streamlines) {
            for (p, q) in a.points().iter().zip(b.points()) {
                assert!(p.distance(*q) < 1e-7 * 80.0_f64.max(1.0));
                assert!((p.x - q.x).abs() <= 1e-7 * p.x.abs().max(1.0));
            }
        }
        assert_eq!(fib_to_string(&back).unwrap(), text);
        assert!(fib_to_string(&Tractogram::default()).is_err());
    }

    #[test]
    fn fib_errors_carry_line_numbers() {
        let p = Path::new("bad.fib");
        let cases = [
            ("FIB 2\n1\n2\n0 0 0\n1 1 1\n", 1),
            ("FIB 1\n0\n", 2),
            ("FIB 1\n1\n2\n0 0 0\n1 x 1\n", 5),
            ("FIB 1\n2\n2\n0 0 0\n1 1 1\n", 6),
            ("FIB 1\n1\n2\n0 0 0\n0 0 0\n", 3),
            ("FIB 1\n1\n2\n0 0 0\n1 1 1\nextra\n", 6),
        ];
        for (text, line) in cases {
            match parse_fib(p, text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        let err = parse_fib(p, "FIB 1\n1\n2\n0 0 0\n1 x 1\n").unwrap_err();
        assert!(err.to_string().starts_with("bad.fib:5:"), "{err}");
    }

    #[test]
    fn label_files() {
        let p = Path::new("l.txt");
        let labels = vec![Label::Plausible, Label::NonPlausible, Label::Plausible];
        let text = labels_to_string(&labels);
        assert_eq!(parse_label_file(p, &text, Some(3)).unwrap(), LabelFile::Labels(labels));
        assert_eq!(
            parse_label_file(p, &class_ids_to_string(&[0, 4, 2]), None).unwrap(),
            LabelFile::ClassIds(vec![0, 4, 2])
        );
        assert!(matches!(parse_label_file(p, &text, Some(4)), Err(Error::Parse { .. })));
        assert!(matches!(parse_label_file(p, "p\n3\n", None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_label_file(p, "p\nmaybe\n", None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut rng = Rng::new(2);
        let t = random_tractogram(&mut rng, 5);
        for arch in Architecture::ALL {
            let mut spec = ModelSpec::new(arch).with_seed(9);
            spec.global_width = 64;
            spec.head = vec![32];
            let model = Model::build(spec).unwrap();
            let text = checkpoint_to_string(&model);
            let back = parse_checkpoint(Path::new("m.ckpt"), &text).unwrap();
            assert_eq!(back.spec(), model.spec());
            assert_eq!(back.params(), model.params());
            let a = model.predict_batch(&t, Some(16), 1).unwrap();
            let b = back.predict_batch(&t, Some(16), 1).unwrap();
            assert_eq!(a, b);
            assert_eq!(checkpoint_to_string(&back), text);

            let broken = text.replacen("VFCKPT 1", "VFCKPT 2", 1);
            assert!(matches!(parse_checkpoint(Path::new("m.ckpt"), &broken), Err(Error::Parse { line: 1, .. })));
            let truncated: String = text.lines().take(14).map(|l| format!("{l}\n")).collect();
            assert!(parse_checkpoint(Path::new("m.ckpt"), &truncated).is_err());
        }
    }

    #[test]
    fn atomic_write_and_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fib");
        let mut rng = Rng::new(3);
        let t = random_tractogram(&mut rng, 3);
        save_fib(&p, &t).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(load_fib(&p).unwrap().len(), 3);
        let missing = load_fib(&dir.path().join("missing.fib")).unwrap_err();
        assert!(missing.is_io());
        assert!(save_fib(&dir.path().join("no/such/dir/x.fib"), &t).unwrap_err().is_io());
    }

    #[test]
    fn prediction_csv_round_trip() {
        let model = Model::build(ModelSpec::new(Architecture::Pn)).unwrap();
        let mut rng = Rng::new(4);
        let t = random_tractogram(&mut rng, 6);
        let preds = model.predict_batch(&t, Some(16), 1).unwrap();
        let csv = predictions_to_csv(&preds);
        assert_eq!(csv.lines().count(), 7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        write_atomic(&p, &csv).unwrap();
        let labels = load_prediction_labels(&p).unwrap();
        assert_eq!(labels, preds.iter().map(|p| p.label()).collect::<Vec<_>>());
    }

    #[test]
    fn mask_round_trip() {
        let bounds = crate::eval::Bounds::cube(10.0).unwrap();
        let s = Streamline::new(vec![Point3::new(-9.0, -9.0, -9.0), Point3::new(9.5, 3.0, -2.0)]).unwrap();
        let mask = crate::eval::voxelize(&[s], 2.0, &bounds).unwrap();
        let text = mask_to_string(&mask);
        let back = parse_mask(Path::new("m.mask"), &text).unwrap();
        assert_eq!(back, mask);
        assert_eq!(mask_to_string(&back), text);
        let bad = text.replacen("voxel 2", "voxel 0", 1);
        assert!(matches!(parse_mask(Path::new("m.mask"), &bad), Err(Error::Parse { line: 5, .. })));
        assert!(matches!(parse_mask(Path::new("m.mask"), "VOXMASK 1\norigin 0 0\n"), Err(Error::Parse { line: 2, .. })));
    }
}
