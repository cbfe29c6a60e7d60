//! 3D radar volume, A-scan views, cell indexing and the GPRV on-disk format.
//!
//! A volume is a dense `n_depth x n_channels x n_scans` block of radar
//! amplitudes. Samples are stored cell-major with depth contiguous, so one
//! A-scan (all depth samples of a single channel/scan cell) is a contiguous
//! slice. The same ordering is used on disk: scan outer, channel middle,
//! depth inner.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const GPRV_MAGIC: &[u8; 4] = b"GPRV";
const GPRV_VERSION: u32 = 1;
/// Header bytes before the sample payload: magic + version + three dims.
const GPRV_HEADER_LEN: u64 = 20;

/// A 3D ground-penetrating-radar volume.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GprVolume {
    n_depth: usize,
    n_channels: usize,
    n_scans: usize,
    samples: Vec<f32>,
}

impl GprVolume {
    /// Builds a volume from raw samples in cell-major order
    /// (scan outer, channel middle, depth inner).
    pub fn new(
        n_depth: usize,
        n_channels: usize,
        n_scans: usize,
        samples: Vec<f32>,
    ) -> Result<Self> {
        if n_depth == 0 || n_channels == 0 || n_scans == 0 {
            return Err(Error::InvalidConfig(format!(
                "volume dims must be nonzero, got {n_depth}x{n_channels}x{n_scans}"
            )));
        }
        let expected = n_depth
            .checked_mul(n_channels)
            .and_then(|p| p.checked_mul(n_scans))
            .ok_or_else(|| Error::InvalidConfig("volume dims overflow".into()))?;
        if samples.len() != expected {
            return Err(Error::DimMismatch(format!(
                "expected {expected} samples for {n_depth}x{n_channels}x{n_scans}, got {}",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "non-finite sample at flat index {bad}"
            )));
        }
        Ok(GprVolume {
            n_depth,
            n_channels,
            n_scans,
            samples,
        })
    }

    /// Zero-filled volume, useful as a canvas for synthesis and tests.
    pub fn zeros(n_depth: usize, n_channels: usize, n_scans: usize) -> Result<Self> {
        let len = n_depth
            .checked_mul(n_channels)
            .and_then(|p| p.checked_mul(n_scans))
            .ok_or_else(|| Error::InvalidConfig("volume dims overflow".into()))?;
        Self::new(n_depth, n_channels, n_scans, vec![0.0; len])
    }

    pub fn n_depth(&self) -> usize {
        self.n_depth
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_scans(&self) -> usize {
        self.n_scans
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    fn cell_offset(&self, ch: usize, dt: usize) -> usize {
        (dt * self.n_channels + ch) * self.n_depth
    }

    /// Amplitude at (depth, channel, scan), all zero-based.
    pub fn sample(&self, depth: usize, ch: usize, dt: usize) -> f32 {
        self.samples[self.cell_offset(ch, dt) + depth]
    }

    pub fn sample_mut(&mut self, depth: usize, ch: usize, dt: usize) -> &mut f32 {
        let idx = self.cell_offset(ch, dt) + depth;
        &mut self.samples[idx]
    }

    /// View of the A-scan at (channel, scan).
    ///
    /// Panics if the indices are out of bounds.
    pub fn a_scan(&self, ch: usize, dt: usize) -> AScanView<'_> {
        assert!(
            ch < self.n_channels && dt < self.n_scans,
            "a_scan({ch},{dt}) out of bounds for {}x{} cells",
            self.n_channels,
            self.n_scans
        );
        let off = self.cell_offset(ch, dt);
        AScanView {
            ch,
            dt,
            samples: &self.samples[off..off + self.n_depth],
        }
    }
}

/// One depth vector of the volume: the radar response at a single
/// channel/scan cell.
#[derive(Debug, Clone, Copy)]
pub struct AScanView<'a> {
    ch: usize,
    dt: usize,
    samples: &'a [f32],
}

impl<'a> AScanView<'a> {
    pub fn channel(&self) -> usize {
        self.ch
    }

    pub fn scan(&self) -> usize {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.samples
    }

    /// Index of the maximum amplitude, ties broken toward the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0usize;
        let mut best_v = f32::NEG_INFINITY;
        for (i, &v) in self.samples.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }

    /// Argmax restricted to the inclusive depth range `[lo, hi]`, clamped to
    /// the scan bounds. Ties go to the smallest index.
    pub fn argmax_in(&self, lo: isize, hi: isize) -> usize {
        let lo = lo.max(0) as usize;
        let hi = (hi.max(0) as usize).min(self.samples.len() - 1);
        let mut best = lo;
        let mut best_v = f32::NEG_INFINITY;
        for i in lo..=hi {
            if self.samples[i] > best_v {
                best_v = self.samples[i];
                best = i;
            }
        }
        best
    }
}

/// Location of one cell in the volume, zero-based internally.
///
/// Docs and file formats use one-based channel/scan numbers to match the
/// usual radar convention; the conversion lives here and nowhere else. The
/// flattened step `k` is one-based: `k = (dt - 1) * n_channels + ch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellIndex {
    pub ch: usize,
    pub dt: usize,
}

impl CellIndex {
    pub fn new(ch: usize, dt: usize) -> Self {
        CellIndex { ch, dt }
    }

    pub fn from_one_based(ch: usize, dt: usize) -> Result<Self> {
        if ch == 0 || dt == 0 {
            return Err(Error::OutOfRange(format!(
                "one-based cell index must be positive, got ch={ch}, dt={dt}"
            )));
        }
        Ok(CellIndex {
            ch: ch - 1,
            dt: dt - 1,
        })
    }

    pub fn to_one_based(self) -> (usize, usize) {
        (self.ch + 1, self.dt + 1)
    }

    /// One-based flattened step index.
    pub fn flatten(self, n_channels: usize) -> usize {
        self.dt * n_channels + self.ch + 1
    }

    /// Inverse of [`CellIndex::flatten`].
    pub fn unflatten(k: usize, n_channels: usize) -> Result<Self> {
        if k == 0 || n_channels == 0 {
            return Err(Error::OutOfRange(format!(
                "flattened index must be positive (k={k}, n_channels={n_channels})"
            )));
        }
        let z = k - 1;
        Ok(CellIndex {
            ch: z % n_channels,
            dt: z / n_channels,
        })
    }
}

/// Reads a GPRV volume from disk.
pub fn load_volume(path: impl AsRef<Path>) -> Result<GprVolume> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, 0, path)?;
    if &magic != GPRV_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"GPRV\"")));
    }
    let version = read_u32_at(&mut r, 4, path)?;
    if version != GPRV_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {GPRV_VERSION}"),
        ));
    }
    let n_depth = read_u32_at(&mut r, 8, path)? as usize;
    let n_channels = read_u32_at(&mut r, 12, path)? as usize;
    let n_scans = read_u32_at(&mut r, 16, path)? as usize;
    if n_depth == 0 || n_channels == 0 || n_scans == 0 {
        return Err(Error::format(
            8,
            format!("dims must be nonzero, got {n_depth}x{n_channels}x{n_scans}"),
        ));
    }

    let count = n_depth
        .checked_mul(n_channels)
        .and_then(|p| p.checked_mul(n_scans))
        .ok_or_else(|| Error::format(8, "dims overflow"))?;
    let mut samples = Vec::with_capacity(count);
    let mut buf = [0u8; 4];
    for i in 0..count {
        let offset = GPRV_HEADER_LEN + 4 * i as u64;
        read_exact_at(&mut r, &mut buf, offset, path)?;
        let v = f32::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::format(offset, format!("non-finite sample {v}")));
        }
        samples.push(v);
    }
    // Reject a payload that continues past the declared dims.
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::format(
                GPRV_HEADER_LEN + 4 * count as u64,
                "trailing bytes after sample payload",
            ))
        }
        Err(e) => return Err(Error::io(path, e)),
    }

    GprVolume::new(n_depth, n_channels, n_scans, samples)
}

/// Writes a GPRV volume. The write is atomic: data lands in a sibling
/// temporary file which is renamed over the target.
pub fn save_volume(v: &GprVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = tmp_sibling(path);
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            w.write_all(GPRV_MAGIC)?;
            w.write_all(&GPRV_VERSION.to_le_bytes())?;
            w.write_all(&(v.n_depth as u32).to_le_bytes())?;
            w.write_all(&(v.n_channels as u32).to_le_bytes())?;
            w.write_all(&(v.n_scans as u32).to_le_bytes())?;
            for s in &v.samples {
                w.write_all(&s.to_le_bytes())?;
            }
            w.flush()
        })();
        if let Err(e) = res {
            let _ = std::fs::remove_file(&tmp);
            return Err(Error::io(path, e));
        }
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn tmp_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, path: &Path) -> Result<()> {
    let mut filled = 0usize;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(
                    offset + filled as u64,
                    "truncated payload: unexpected end of file",
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    Ok(())
}

fn read_u32_at<R: Read>(r: &mut R, offset: u64, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_at(r, &mut buf, offset, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn smallest_legal_volume_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.gprv");
        let v = GprVolume::new(1, 1, 1, vec![0.0]).unwrap();
        save_volume(&v, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn random_volume_round_trips_bit_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 415 * 24 * 100;
        let samples: Vec<f32> = (0..n).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let v = GprVolume::new(415, 24, 100, samples).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.gprv");
        save_volume(&v, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.samples().len(), v.samples().len());
        for (a, b) in back.samples().iter().zip(v.samples()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.gprv");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        match load_volume(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.gprv");
        let v = GprVolume::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        save_volume(&v, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        match load_volume(&path) {
            Err(Error::Format { offset, msg }) => {
                assert!(offset >= GPRV_HEADER_LEN, "offset {offset} in header");
                assert!(msg.contains("truncated"), "msg: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_sample_rejected_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.gprv");
        let v = GprVolume::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        save_volume(&v, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_volume(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dims_rejected_before_write() {
        assert!(GprVolume::new(0, 1, 1, vec![]).is_err());
        assert!(GprVolume::new(1, 0, 1, vec![]).is_err());
    }

    #[test]
    fn overwrite_is_atomic_and_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("over.gprv");
        let a = GprVolume::new(1, 1, 1, vec![1.0]).unwrap();
        let b = GprVolume::new(1, 1, 2, vec![2.0, 3.0]).unwrap();
        save_volume(&a, &path).unwrap();
        save_volume(&b, &path).unwrap();
        assert_eq!(load_volume(&path).unwrap(), b);
        assert!(!tmp_sibling(&path).exists());
    }

    #[test]
    fn argmax_prefers_smallest_index_on_ties() {
        let v = GprVolume::new(4, 1, 1, vec![0.0, 5.0, 5.0, 0.0]).unwrap();
        assert_eq!(v.a_scan(0, 0).argmax(), 1);
        let v2 = GprVolume::new(4, 1, 1, vec![0.0, 1.0, 5.0, 2.0]).unwrap();
        assert_eq!(v2.a_scan(0, 0).argmax(), 2);
    }

    #[test]
    fn cell_index_flatten_matches_definition() {
        // one-based: k = (dt-1)*n_ch + ch
        let c = CellIndex::from_one_based(3, 2).unwrap();
        assert_eq!(c.flatten(24), 24 + 3);
        assert_eq!(CellIndex::unflatten(27, 24).unwrap(), c);
    }

    proptest::proptest! {
        #[test]
        fn flatten_unflatten_bijection(ch in 0usize..64, dt in 0usize..512, n_ch in 1usize..65) {
            proptest::prop_assume!(ch < n_ch);
            let c = CellIndex::new(ch, dt);
            let k = c.flatten(n_ch);
            proptest::prop_assert_eq!(CellIndex::unflatten(k, n_ch).unwrap(), c);
        }
    }
}
