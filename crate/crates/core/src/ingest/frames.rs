use crate::error::{Error, Result};

/// Indices of `t_v` regularly spaced frames out of `len`:
/// `floor(j * (len - 1) / (t_v - 1))`. Shorter videos keep every frame and
/// repeat the last one up to `t_v`.
pub fn frame_indices(len: usize, t_v: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::EmptyVideo);
    }
    if t_v == 0 {
        return Err(Error::Config("frame count must be at least 1".into()));
    }
    if len < t_v {
        return Ok((0..t_v).map(|j| j.min(len - 1)).collect());
    }
    if t_v == 1 {
        return Ok(vec![0]);
    }
    Ok((0..t_v).map(|j| j * (len - 1) / (t_v - 1)).collect())
}

pub fn sample_frames<T: Clone>(frames: &[T], t_v: usize) -> Result<Vec<T>> {
    Ok(frame_indices(frames.len(), t_v)?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_twenty_frames_to_twelve() {
        let idx = frame_indices(120, 12).unwrap();
        let oracle: Vec<usize> = (0..12)
            .map(|j| ((j as f64) * 119.0 / 11.0).floor() as usize)
            .collect();
        assert_eq!(idx, oracle);
        assert_eq!(idx[..3], [0, 10, 21]);
        assert_eq!(*idx.last().unwrap(), 119);
    }

    #[test]
    fn identity_and_padding() {
        assert_eq!(frame_indices(12, 12).unwrap(), (0..12).collect::<Vec<_>>());
        let frames: Vec<u32> = (0..5).collect();
        let s = sample_frames(&frames, 12).unwrap();
        assert_eq!(s[..5], [0, 1, 2, 3, 4]);
        assert!(s[5..].iter().all(|&f| f == 4));
        assert_eq!(s.len(), 12);
    }

    #[test]
    fn empty_video_rejected() {
        let frames: Vec<u8> = vec![];
        assert_eq!(
            sample_frames(&frames, 12).unwrap_err().to_string(),
            "empty video"
        );
    }

    proptest! {
        #[test]
        fn indices_in_range_and_non_decreasing(len in 1usize..400, t_v in 1usize..40) {
            let idx = frame_indices(len, t_v).unwrap();
            prop_assert_eq!(idx.len(), t_v);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.iter().all(|&i| i < len));
            prop_assert_eq!(idx[0], 0);
        }
    }
}
