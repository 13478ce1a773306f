use super::Box3D;
use crate::radar::RadarGeometry;

/// Number of regressed box values per query.
pub const BOX_PARAMS: usize = 8;

/// Maps boxes to and from the normalized regression space.
///
/// Layout: `[u·s, v·s, z', ln w', ln l', ln h', sin yaw, cos yaw]`, where
/// `(u, v)` are the centre's azimuth and range fractions on the RA map,
/// `s` is `offset_scale`, and primed values are relative to size priors.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxCoder {
    /// First and last range bin centres, metres.
    pub range: (f64, f64),
    /// First and last azimuth bin centres, radians.
    pub azimuth: (f64, f64),
    pub offset_scale: f64,
    pub z_center: f64,
    pub size_prior: [f64; 3],
}

impl BoxCoder {
    pub fn new(geometry: &RadarGeometry) -> Self {
        let r = geometry.range_axis();
        let a = geometry.azimuth_axis();
        BoxCoder {
            range: (r[0], r[r.len() - 1]),
            azimuth: (a[0], a[a.len() - 1]),
            offset_scale: 10.0,
            z_center: -0.7,
            size_prior: [2.0, 4.5, 1.6],
        }
    }

    /// RA-map fractions `(u, v)` of a ground-plane point.
    pub fn to_map(&self, x: f64, y: f64) -> [f64; 2] {
        let r = x.hypot(y);
        let az = y.atan2(x);
        [
            (az - self.azimuth.0) / (self.azimuth.1 - self.azimuth.0),
            (r - self.range.0) / (self.range.1 - self.range.0),
        ]
    }

    pub fn from_map(&self, u: f64, v: f64) -> (f64, f64) {
        let r = self.range.0 + v * (self.range.1 - self.range.0);
        let az = self.azimuth.0 + u * (self.azimuth.1 - self.azimuth.0);
        (r * az.cos(), r * az.sin())
    }

    pub fn encode(&self, b: &Box3D) -> [f64; BOX_PARAMS] {
        let [u, v] = self.to_map(b.x, b.y);
        let [pw, pl, ph] = self.size_prior;
        [
            u * self.offset_scale,
            v * self.offset_scale,
            b.z - self.z_center,
            (b.w / pw).ln(),
            (b.l / pl).ln(),
            (b.h / ph).ln(),
            b.yaw.sin(),
            b.yaw.cos(),
        ]
    }

    /// Inverse of [`encode`](Self::encode); log-sizes are clamped to ±4 so
    /// untrained outputs still decode to finite boxes.
    pub fn decode(&self, p: &[f64]) -> Box3D {
        let (x, y) = self.from_map(p[0] / self.offset_scale, p[1] / self.offset_scale);
        let [pw, pl, ph] = self.size_prior;
        let size = |v: f64, prior: f64| prior * v.clamp(-4.0, 4.0).exp();
        Box3D::new(
            [x, y, p[2] + self.z_center],
            [size(p[3], pw), size(p[4], pl), size(p[5], ph)],
            p[6].atan2(p[7]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_of_map_decodes_straight_ahead() {
        let c = BoxCoder::new(&RadarGeometry::default());
        let mut p = [0.0; BOX_PARAMS];
        p[0] = 0.5 * c.offset_scale;
        p[1] = 0.5 * c.offset_scale;
        let b = c.decode(&p);
        assert!((b.x - 24.0).abs() < 1e-12 && b.y.abs() < 1e-12);
        assert_eq!((b.w, b.l, b.h), (2.0, 4.5, 1.6));
    }

    #[test]
    fn round_trip() {
        let c = BoxCoder::new(&RadarGeometry::default());
        let b = Box3D::new([18.0, -5.0, -0.3], [1.9, 4.4, 1.7], 2.5);
        let d = c.decode(&c.encode(&b));
        for (x, y) in [(b.x, d.x), (b.y, d.y), (b.z, d.z), (b.w, d.w), (b.l, d.l), (b.h, d.h), (b.yaw, d.yaw)] {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
