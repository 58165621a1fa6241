# Generated by Django 4.2.7 on 2026-10-17 10:12

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('config_hash', models.CharField(db_index=True, help_text='SHA-256 del JSON canónico de la configuración', max_length=64, verbose_name='Hash de configuración')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('stage', models.CharField(choices=[('rays', 'Rayos'), ('source', 'Fuente'), ('solve', 'Solver'), ('extract', 'Extracción'), ('invert', 'Inversión'), ('verify', 'Verificación'), ('demo', 'Demostración')], help_text='Subcomando ejecutado', max_length=20, verbose_name='Etapa')),
                ('mode', models.CharField(choices=[('pde', 'EDP'), ('oracle', 'Oráculo')], default='pde', help_text='Datos medidos por el solver o sustituidos por el oráculo', max_length=10, verbose_name='Modo')),
                ('status', models.CharField(choices=[('running', 'En curso'), ('ok', 'Correcta'), ('failed', 'Fallida')], default='running', max_length=10, verbose_name='Estado')),
                ('exit_code', models.PositiveSmallIntegerField(blank=True, null=True, verbose_name='Código de salida')),
                ('output_dir', models.CharField(max_length=500, verbose_name='Directorio de salida')),
                ('workers', models.PositiveSmallIntegerField(default=1, verbose_name='Hilos')),
                ('summary', models.JSONField(blank=True, default=dict, help_text='Números principales devueltos por la etapa', verbose_name='Resumen')),
                ('error', models.TextField(blank=True, verbose_name='Error')),
            ],
            options={
                'verbose_name': 'Corrida',
                'verbose_name_plural': 'Corridas',
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['stage', 'status'], name='experiments_stage_status_idx')],
            },
        ),
        migrations.CreateModel(
            name='RunArtifact',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('kind', models.CharField(choices=[('manifest', 'Manifiesto de rayos'), ('field', 'Campo WAVF'), ('sidecar', 'Archivo lateral JSON'), ('table', 'Tabla CSV'), ('plot', 'Gráfico')], max_length=20, verbose_name='Tipo')),
                ('path', models.CharField(max_length=500, verbose_name='Ruta')),
                ('digest', models.CharField(max_length=64, verbose_name='SHA-256')),
                ('size', models.PositiveBigIntegerField(default=0, verbose_name='Tamaño (bytes)')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='artifacts', to='experiments.experimentrun', verbose_name='Corrida')),
            ],
            options={
                'verbose_name': 'Artefacto',
                'verbose_name_plural': 'Artefactos',
                'ordering': ['run', 'path'],
                'unique_together': {('run', 'path')},
            },
        ),
    ]
