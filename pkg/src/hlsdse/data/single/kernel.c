void scale(float a[100])
{
#pragma ACCEL PIPELINE auto{PIPE_L0}
#pragma ACCEL TILE FACTOR=auto{TILE_L0}
#pragma ACCEL PARALLEL FACTOR=auto{PF_L0}
  for (int i = 0; i < 100; i++) {
    a[i] = a[i] * 2.0f + 1.0f;
  }
}
