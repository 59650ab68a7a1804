//! Case-study constants. Each value appears once; the comment names the table
//! it comes from, or marks it as chosen here when no source value exists.
//! CPU figures given in GHz are converted at 1 GHz = 1000 MIPS.

// Device configuration table (EEG game).
pub const GATEWAY_MIPS: f64 = 3000.0; // WiFi/ISP gateway, 3.0 GHz
pub const SMARTPHONE_MIPS: f64 = 1600.0; // 1.6 GHz
pub const GATEWAY_RAM_MB: f64 = 4096.0; // 4 GB, also the cloud VM
pub const SMARTPHONE_RAM_MB: f64 = 1024.0; // 1 GB
pub const SERVER_BUSY_W: f64 = 107.339; // cloud VM and gateways
pub const SERVER_IDLE_W: f64 = 83.433;
pub const SMARTPHONE_BUSY_W: f64 = 87.53;
pub const SMARTPHONE_IDLE_W: f64 = 82.44;

// Cloud root capacity: finite so that it can become a bottleneck.
pub const CLOUD_MIPS: f64 = 40_000.0;

// EEG sensor table.
pub const HEADSET_A_EEG_MI: f64 = 2000.0;
pub const HEADSET_A_INTERVAL_MS: f64 = 10.0;
pub const HEADSET_B_EEG_MI: f64 = 2500.0;
pub const HEADSET_B_INTERVAL_MS: f64 = 5.0;

// EEG inter-module edge table: (cpu MI, nw bytes).
pub const EEG_NW_BYTES: u64 = 500;
pub const SENSOR_EDGE: (f64, u64) = (3500.0, 500); // `_SENSOR`
pub const PLAYER_GAME_STATE: (f64, u64) = (1000.0, 1000);
pub const CONCENTRATION: (f64, u64) = (14.0, 500);
pub const GLOBAL_GAME_STATE: (f64, u64) = (1000.0, 1000);
pub const GLOBAL_STATE_UPDATE: (f64, u64) = (1000.0, 500);
pub const SELF_STATE_UPDATE: (f64, u64) = (1000.0, 500);

// EEG network link table (ms).
pub const HEADSET_TO_PHONE_MS: f64 = 6.0;
pub const PHONE_TO_WIFI_MS: f64 = 2.0;
pub const WIFI_TO_ISP_MS: f64 = 4.0;
pub const ISP_TO_CLOUD_MS: f64 = 100.0; // same in both case studies

// Surveillance inter-module edge table: (cpu MI, nw bytes).
pub const RAW_VIDEO_STREAM: (f64, u64) = (1000.0, 20000);
pub const MOTION_VIDEO_STREAM: (f64, u64) = (2000.0, 2000);
pub const DETECTED_OBJECT: (f64, u64) = (500.0, 2000);
pub const OBJECT_LOCATION: (f64, u64) = (1000.0, 100);
pub const PTZ_PARAMS: (f64, u64) = (100.0, 100);

// Surveillance sensor table.
pub const CAMERA_INTERVAL_MS: f64 = 5.0;

// Surveillance network link table (ms).
pub const CAMERA_TO_AREA_MS: f64 = 2.0;
pub const AREA_TO_ISP_MS: f64 = 2.0;

// Topology scaling: config k has 2^(k-1) groups of 4 end devices.
pub const DEVICES_PER_GROUP: usize = 4;
pub const MAX_CONFIG: u8 = 5;

// Chosen here; no source value.
pub const DEFAULT_PERIOD_MS: f64 = 100.0; // periodic game-state edges
pub const CAMERA_MIPS: f64 = 500.0;
pub const CAMERA_RAM_MB: f64 = 1024.0;
pub const ACTUATOR_LATENCY_MS: f64 = 1.0; // DISPLAY and PTZ attachment
pub const CAMERA_SENSOR_LATENCY_MS: f64 = 1.0;
pub const LINK_BW_BYTES_PER_MS: f64 = 10_000.0;
pub const BACKBONE_BW_BYTES_PER_MS: f64 = 100_000.0; // ISP <-> cloud
pub const MODULE_RAM_MB: f64 = 10.0;
pub const STORAGE_MB: f64 = 10_000.0;
pub const DETECTED_OBJECT_SELECTIVITY: f64 = 0.05;
pub const EEG_DURATION_MS: f64 = 3.0 * 3600.0 * 1000.0;
pub const SURVEILLANCE_DURATION_MS: f64 = 1000.0 * 1000.0;
