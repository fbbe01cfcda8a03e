//! Great-circle distances and the (lon, lat) standardization used for model
//! inputs.
//!
//!     cargo run --release --example geodesy

use seatrack::geo::{fit_standardizer, haversine_nmi, GeoPoint, EARTH_RADIUS_NMI};

fn main() -> seatrack::Result<()> {
    let origin = GeoPoint::new(0.0, 0.0)?;
    let arcmin = GeoPoint::new(0.0, 1.0 / 60.0)?;
    println!("earth radius: {EARTH_RADIUS_NMI:.3} nmi");
    println!("one arc-minute of longitude on the equator: {:.6} nmi", haversine_nmi(origin, arcmin));

    let skagen = GeoPoint::new(57.7209, 10.5839)?;
    let copenhagen = GeoPoint::new(55.6761, 12.5683)?;
    let d = haversine_nmi(skagen, copenhagen);
    println!("Skagen to Copenhagen: {d:.2} nmi (reverse {:.2})", haversine_nmi(copenhagen, skagen));

    let antipode = GeoPoint::new(-57.7209, 10.5839 - 180.0)?;
    println!("Skagen to its antipode: {:.2} nmi", haversine_nmi(skagen, antipode));

    let track = [skagen, GeoPoint::new(57.0, 11.2)?, GeoPoint::new(56.3, 11.9)?, copenhagen];
    let st = fit_standardizer(&track)?;
    println!("standardizer mean (lon, lat) = {:?}, std = {:?}", st.mean, st.std);
    for p in &track {
        let z = st.apply(*p);
        let back = st.invert(z);
        println!(
            "  ({:.4}, {:.4}) -> [{:+.4}, {:+.4}] -> ({:.4}, {:.4})",
            p.lat, p.lon, z[0], z[1], back.lat, back.lon
        );
    }
    Ok(())
}
