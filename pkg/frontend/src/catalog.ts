// The record field catalog, mirrored from the gateway. The server rejects
// anything outside this list, so the console can safely build its checkbox
// grid from it.

export interface CatalogField {
  name: string;
  group: "environment" | "patient_info" | "current_medical";
}

export const CATALOG: CatalogField[] = [
  { name: "location", group: "environment" },
  { name: "collected_at", group: "environment" },
  { name: "age", group: "patient_info" },
  { name: "status", group: "patient_info" },
  { name: "blood_group", group: "patient_info" },
  { name: "height", group: "patient_info" },
  { name: "weight", group: "patient_info" },
  { name: "bgm", group: "patient_info" },
  { name: "heart_rate", group: "current_medical" },
  { name: "blood_pressure", group: "current_medical" },
  { name: "sugar_level", group: "current_medical" },
  { name: "operation_history", group: "current_medical" },
];

export const FIELD_NAMES = CATALOG.map((f) => f.name);

export const GROUP_LABELS: Record<CatalogField["group"], string> = {
  environment: "Environment",
  patient_info: "Patient info",
  current_medical: "Current medical data",
};

export const PUBLIC_ROLES = ["patient", "physician", "records_officer"] as const;

export type Role = "patient" | "physician" | "records_officer" | "admin";
