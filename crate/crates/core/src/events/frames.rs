use super::{decay_factor, EventError, EventStream};
use rand::Rng;

/// Per-bin event counts laid out `[bin][polarity][y][x]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    bins: usize,
    bin_us: u32,
    height: usize,
    width: usize,
    counts: Vec<u32>,
}

impl FrameSequence {
    pub const CHANNELS: usize = 2;

    pub fn zeros(bins: usize, bin_us: u32, height: usize, width: usize) -> Self {
        Self {
            bins,
            bin_us,
            height,
            width,
            counts: vec![0; bins * Self::CHANNELS * height * width],
        }
    }

    /// Builds a sequence from raw counts; `counts.len()` must match the shape.
    pub fn from_counts(
        bins: usize,
        bin_us: u32,
        height: usize,
        width: usize,
        counts: Vec<u32>,
    ) -> Option<Self> {
        (counts.len() == bins * Self::CHANNELS * height * width).then_some(Self {
            bins,
            bin_us,
            height,
            width,
            counts,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_us(&self) -> u32 {
        self.bin_us
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        Self::CHANNELS * self.height * self.width
    }

    /// Counts of bin `t` as a `[2][H][W]` slice.
    pub fn frame(&self, t: usize) -> &[u32] {
        let n = self.frame_len();
        &self.counts[t * n..(t + 1) * n]
    }

    /// Bin `t` converted to f32, the encoder's input type.
    pub fn frame_f32(&self, t: usize) -> Vec<f32> {
        self.frame(t).iter().map(|&c| c as f32).collect()
    }

    pub fn get(&self, t: usize, p: usize, y: usize, x: usize) -> u32 {
        self.counts[((t * Self::CHANNELS + p) * self.height + y) * self.width + x]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Contiguous sub-range of bins `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let n = self.frame_len();
        Self {
            bins: len,
            bin_us: self.bin_us,
            height: self.height,
            width: self.width,
            counts: self.counts[start * n..(start + len) * n].to_vec(),
        }
    }
}

/// Counts events into half-open bins `[t*dt, (t+1)*dt)`; events past the
/// last bin are dropped.
pub fn bin_events(
    stream: &EventStream,
    bin_us: u32,
    bins: usize,
) -> Result<FrameSequence, EventError> {
    if bins == 0 {
        return Err(EventError::ZeroBins);
    }
    if bin_us == 0 {
        return Err(EventError::ZeroBinWidth);
    }
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mut frames = FrameSequence::zeros(bins, bin_us, h, w);
    let plane = h * w;
    for e in stream.events() {
        let t = (e.t / bin_us as u64) as usize;
        if t >= bins {
            // sorted by t, nothing later can land in range
            break;
        }
        let idx = (t * 2 + e.p.index()) * plane + e.y as usize * w + e.x as usize;
        frames.counts[idx] += 1;
    }
    Ok(frames)
}

/// Sums each `factor` x `factor` block, preserving total counts.
pub fn downsample_spatial(
    frames: &FrameSequence,
    factor: usize,
) -> Result<FrameSequence, EventError> {
    let (h, w) = (frames.height, frames.width);
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(EventError::NotDivisible {
            height: h,
            width: w,
            factor,
        });
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = FrameSequence::zeros(frames.bins, frames.bin_us, oh, ow);
    let planes = frames.bins * FrameSequence::CHANNELS;
    for plane in 0..planes {
        let src = &frames.counts[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.counts[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let drow = &mut dst[(y / factor) * ow..(y / factor + 1) * ow];
            for (x, &c) in row.iter().enumerate() {
                drow[x / factor] += c;
            }
        }
    }
    Ok(out)
}

/// Uniformly placed window of `duration_ms`. Short samples are an error.
pub fn random_crop_ms<R: Rng + ?Sized>(
    frames: &FrameSequence,
    duration_ms: u64,
    rng: &mut R,
) -> Result<FrameSequence, EventError> {
    let len = (duration_ms * 1000 / frames.bin_us as u64) as usize;
    if len == 0 {
        return Err(EventError::ZeroBins);
    }
    if frames.bins < len {
        return Err(EventError::TooShort {
            available_ms: frames.bins as u64 * frames.bin_us as u64 / 1000,
            requested_ms: duration_ms,
        });
    }
    let start = rng.gen_range(0..=frames.bins - len);
    Ok(frames.window(start, len))
}

/// Exponentially decayed per-pixel trace, one plane per polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceImage {
    pub height: usize,
    pub width: usize,
    pub tau_ms: f64,
    /// `[2][H][W]`
    pub data: Vec<f32>,
}

/// Running time-surface state; feeding frames one at a time is equivalent to
/// a single [`time_surface`] call over their concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    beta: f32,
    image: TraceImage,
}

impl TraceState {
    pub fn new(height: usize, width: usize, tau_ms: f64, bin_us: u32) -> Result<Self, EventError> {
        if !(tau_ms > 0.0) {
            return Err(EventError::BadTimeConstant(tau_ms));
        }
        Ok(Self {
            beta: decay_factor(bin_us as f64 / 1000.0, tau_ms),
            image: TraceImage {
                height,
                width,
                tau_ms,
                data: vec![0.0; FrameSequence::CHANNELS * height * width],
            },
        })
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    /// `TS <- beta * TS + (1 - beta) * S`
    pub fn advance(&mut self, frame: &[u32]) {
        let beta = self.beta;
        for (ts, &s) in self.image.data.iter_mut().zip(frame) {
            *ts = beta * *ts + (1.0 - beta) * s as f32;
        }
    }

    pub fn feed(&mut self, frames: &FrameSequence) {
        for t in 0..frames.bins() {
            self.advance(frames.frame(t));
        }
    }

    pub fn image(&self) -> &TraceImage {
        &self.image
    }

    pub fn into_image(self) -> TraceImage {
        self.image
    }
}

/// Time surface after the last bin of `frames`, starting from zero.
pub fn time_surface(frames: &FrameSequence, tau_ms: f64) -> Result<TraceImage, EventError> {
    let mut state = TraceState::new(frames.height, frames.width, tau_ms, frames.bin_us)?;
    state.feed(frames);
    Ok(state.into_image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Polarity, BIN_US};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stream(w: u16, h: u16, evs: &[(u64, u16, u16, u8)]) -> EventStream {
        EventStream::new(
            w,
            h,
            evs.iter()
                .map(|&(t, x, y, p)| Event::new(t, x, y, Polarity::from_bit(p).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn bin_empty_stream() {
        let f = bin_events(&EventStream::empty(8, 8), BIN_US, 10).unwrap();
        assert_eq!(f.bins(), 10);
        assert_eq!(f.counts().len(), 10 * 2 * 8 * 8);
        assert_eq!(f.total(), 0);
    }

    #[test]
    fn bin_single_event() {
        let f = bin_events(&stream(8, 8, &[(500, 3, 4, 1)]), BIN_US, 3).unwrap();
        assert_eq!(f.get(0, 1, 4, 3), 1);
        assert_eq!(f.total(), 1);
    }

    #[test]
    fn bin_counts_are_additive() {
        let f = bin_events(&stream(8, 8, &[(100, 2, 2, 0), (900, 2, 2, 0)]), BIN_US, 2).unwrap();
        assert_eq!(f.get(0, 0, 2, 2), 2);
    }

    #[test]
    fn bin_boundary_goes_to_later_bin() {
        let f = bin_events(&stream(4, 4, &[(1000, 0, 0, 1), (2999, 1, 0, 1)]), BIN_US, 3).unwrap();
        assert_eq!(f.get(1, 1, 0, 0), 1);
        assert_eq!(f.get(2, 1, 0, 1), 1);
    }

    #[test]
    fn bin_drops_late_events_and_rejects_zero_bins() {
        let f = bin_events(&stream(4, 4, &[(500, 0, 0, 1), (5000, 0, 0, 1)]), BIN_US, 2).unwrap();
        assert_eq!(f.total(), 1);
        assert_eq!(bin_events(&EventStream::empty(4, 4), BIN_US, 0), Err(EventError::ZeroBins));
    }

    #[test]
    fn downsample_block_mapping() {
        let f = bin_events(&stream(128, 128, &[(0, 127, 0, 1)]), BIN_US, 1).unwrap();
        let d = downsample_spatial(&f, 4).unwrap();
        assert_eq!((d.height(), d.width()), (32, 32));
        assert_eq!(d.get(0, 1, 0, 31), 1);
        assert_eq!(d.total(), 1);
    }

    #[test]
    fn downsample_all_ones() {
        let f = FrameSequence::from_counts(1, BIN_US, 4, 4, vec![1; 32]).unwrap();
        let d = downsample_spatial(&f, 2).unwrap();
        assert!(d.counts().iter().all(|&c| c == 4));
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let f = FrameSequence::zeros(1, BIN_US, 6, 6);
        assert!(matches!(
            downsample_spatial(&f, 4),
            Err(EventError::NotDivisible { factor: 4, .. })
        ));
    }

    #[test]
    fn crop_identity_when_exact() {
        let f = FrameSequence::from_counts(200, BIN_US, 1, 1, (0..400).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(random_crop_ms(&f, 200, &mut rng).unwrap(), f);
    }

    #[test]
    fn crop_deterministic_under_seed() {
        let f = FrameSequence::from_counts(600, BIN_US, 1, 1, (0..1200).collect()).unwrap();
        let a = random_crop_ms(&f, 200, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = random_crop_ms(&f, 200, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bins(), 200);
    }

    #[test]
    fn crop_too_short_is_error() {
        let f = FrameSequence::zeros(150, BIN_US, 1, 1);
        let err = random_crop_ms(&f, 200, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(
            err,
            EventError::TooShort {
                available_ms: 150,
                requested_ms: 200
            }
        );
    }

    #[test]
    fn crop_start_is_uniform() {
        // Chi-square over 401 possible starts, 10^4 draws, grouped into 20 cells.
        let bins = 600;
        let f = FrameSequence::from_counts(
            bins,
            BIN_US,
            1,
            1,
            (0..bins as u32).flat_map(|t| [t, 0]).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let cells = 20;
        let mut hist = vec![0f64; cells];
        let draws = 10_000;
        for _ in 0..draws {
            let start = random_crop_ms(&f, 200, &mut rng).unwrap().get(0, 0, 0, 0) as usize;
            assert!(start <= 400);
            hist[start * cells / 401] += 1.0;
        }
        let chi2: f64 = (0..cells)
            .map(|c| {
                let lo = (c * 401).div_ceil(cells);
                let hi = ((c + 1) * 401).div_ceil(cells);
                let expected = draws as f64 * (hi - lo) as f64 / 401.0;
                (hist[c] - expected).powi(2) / expected
            })
            .sum();
        // 99th percentile of chi-square with 19 degrees of freedom
        assert!(chi2 < 36.19, "chi2 = {chi2}");
    }

    /// Step-by-step recurrence in f64, independent of `TraceState`.
    fn recurrence_oracle(inputs: &[f64], beta: f64) -> f64 {
        inputs.iter().fold(0.0, |ts, &s| beta * ts + (1.0 - beta) * s)
    }

    #[test]
    fn time_surface_zero_input() {
        let ts = time_surface(&FrameSequence::zeros(20, BIN_US, 4, 4), 10.0).unwrap();
        assert!(ts.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_surface_single_event_closed_form() {
        let t_bins = 25;
        let f = bin_events(&stream(4, 4, &[(10, 1, 2, 1)]), BIN_US, t_bins).unwrap();
        let ts = time_surface(&f, 10.0).unwrap();
        let beta = (-0.1f64).exp();
        let closed = (1.0 - beta) * beta.powi(t_bins as i32 - 1);
        let mut inputs = vec![0.0; t_bins];
        inputs[0] = 1.0;
        let oracle = recurrence_oracle(&inputs, beta);
        assert!((closed - oracle).abs() < 1e-12);
        let got = ts.data[16 + 2 * 4 + 1] as f64;
        assert!((got - closed).abs() < 1e-6, "{got} vs {closed}");
    }

    #[test]
    fn time_surface_two_bins() {
        let f = bin_events(&stream(2, 2, &[(0, 0, 0, 0), (1000, 0, 0, 0)]), BIN_US, 2).unwrap();
        let ts = time_surface(&f, 5.0).unwrap();
        let beta = (-0.2f64).exp();
        let expect = (1.0 - beta) * (1.0 + beta);
        assert!((recurrence_oracle(&[1.0, 1.0], beta) - expect).abs() < 1e-12);
        assert!((ts.data[0] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn time_surface_rejects_bad_tau() {
        let f = FrameSequence::zeros(1, BIN_US, 1, 1);
        assert!(time_surface(&f, 0.0).is_err());
    }

    fn arb_events(w: u16, h: u16, max_t: u64) -> impl Strategy<Value = EventStream> {
        prop::collection::vec((0..max_t, 0..w, 0..h, 0u8..2), 0..200).prop_map(move |recs| {
            stream(w, h, &recs)
        })
    }

    proptest! {
        #[test]
        fn binning_preserves_in_range_count(s in arb_events(16, 16, 40_000), bins in 1usize..50) {
            let f = bin_events(&s, BIN_US, bins).unwrap();
            let in_range = s.events().iter().filter(|e| e.t < bins as u64 * 1000).count() as u64;
            prop_assert_eq!(f.total(), in_range);
        }

        #[test]
        fn downsample_commutes_with_coordinate_division(s in arb_events(16, 16, 20_000)) {
            let a = downsample_spatial(&bin_events(&s, BIN_US, 20).unwrap(), 4).unwrap();
            let b = bin_events(&s.downscale(4).unwrap(), BIN_US, 20).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn time_surface_prefix_consistent(s in arb_events(4, 4, 30_000), cut in 0usize..30) {
            let f = bin_events(&s, BIN_US, 30).unwrap();
            let whole = time_surface(&f, 10.0).unwrap();
            let mut st = TraceState::new(4, 4, 10.0, BIN_US).unwrap();
            st.feed(&f.window(0, cut));
            let saved = st.clone();
            let mut resumed = saved;
            resumed.feed(&f.window(cut, 30 - cut));
            prop_assert_eq!(resumed.image(), &whole);
        }

        #[test]
        fn binary_input_keeps_surface_below_one(bits in prop::collection::vec(0u32..2, 40)) {
            let f = FrameSequence::from_counts(20, BIN_US, 1, 1, bits).unwrap();
            let ts = time_surface(&f, 7.0).unwrap();
            prop_assert!(ts.data.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }
}
