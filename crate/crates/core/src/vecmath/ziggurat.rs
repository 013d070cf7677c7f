//! Marsaglia–Tsang ziggurat with 128 layers (Doornik's layout). Tables are
//! built once with `libm`, so every platform samples identical values.

use alloc::boxed::Box;
use once_cell::race::OnceBox;

use super::SeededStream;
use crate::math;

const LAYERS: usize = 128;
const R: f64 = 3.442619855899;
const V: f64 = 9.91256303526217e-3;

struct Tables {
    x: [f64; LAYERS + 1],
    ratio: [f64; LAYERS],
}

static TABLES: OnceBox<Tables> = OnceBox::new();

fn tables() -> &'static Tables {
    TABLES.get_or_init(|| {
        let mut x = [0.0; LAYERS + 1];
        let mut f = math::exp(-0.5 * R * R);
        x[0] = V / f;
        x[1] = R;
        for i in 2..LAYERS {
            x[i] = math::sqrt(-2.0 * math::ln(V / x[i - 1] + f));
            f = math::exp(-0.5 * x[i] * x[i]);
        }
        let mut ratio = [0.0; LAYERS];
        for i in 0..LAYERS {
            ratio[i] = x[i + 1] / x[i];
        }
        Box::new(Tables { x, ratio })
    })
}

pub(super) fn sample(s: &mut SeededStream) -> f64 {
    let t = tables();
    loop {
        let bits = s.next_u64();
        let i = (bits & 0x7F) as usize;
        let u = 2.0 * (((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)) - 1.0;
        if math::abs(u) < t.ratio[i] {
            return u * t.x[i];
        }
        if i == 0 {
            return tail(s, u < 0.0);
        }
        let x = u * t.x[i];
        let f0 = math::exp(-0.5 * (t.x[i] * t.x[i] - x * x));
        let f1 = math::exp(-0.5 * (t.x[i + 1] * t.x[i + 1] - x * x));
        if f1 + s.next_open01() * (f0 - f1) < 1.0 {
            return x;
        }
    }
}

fn tail(s: &mut SeededStream, negative: bool) -> f64 {
    loop {
        let x = math::ln(s.next_open01()) / R;
        let y = math::ln(s.next_open01());
        if -2.0 * y >= x * x {
            return if negative { x - R } else { R - x };
        }
    }
}
