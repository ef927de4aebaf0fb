#![no_main]

use libfuzzer_sys::fuzz_target;
use rrdps_core::MeasuredTable;

fuzz_target!(|data: &[u8]| {
    let Some((&len, body)) = data.split_first() else { return };
    let packet_len = u32::from(len % 70);
    if let Ok(table) = MeasuredTable::parse(body, packet_len) {
        assert_eq!(table.rows().len() as u32, packet_len - 1);
        let _ = table.loss_entries();
        assert!(table.mean_total_il_db().is_finite());
    }
});
